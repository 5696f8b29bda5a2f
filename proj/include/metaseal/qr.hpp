#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metaseal/common.hpp"

namespace metaseal::qr {

enum class Ecc { L = 0, M = 1, Q = 2, H = 3 };

const char* ecc_name(Ecc e);

// Square module grid; true = dark.
struct Matrix {
  int size = 0;
  std::vector<std::uint8_t> modules;

  Matrix() = default;
  explicit Matrix(int size_)
      : size(size_),
        modules(static_cast<std::size_t>(size_) * size_, 0) {}

  bool get(int row, int col) const {
    return modules[static_cast<std::size_t>(row) * size + col] != 0;
  }
  void set(int row, int col, bool dark) {
    modules[static_cast<std::size_t>(row) * size + col] = dark ? 1 : 0;
  }
};

struct EncodeResult {
  Matrix matrix;
  int version = 0;
  Ecc ecc = Ecc::M;
  int mask = 0;
};

struct DecodeResult {
  Bytes payload;
  int version = 0;
  Ecc ecc = Ecc::M;
  int mask = 0;
  int corrected_symbols = 0;
};

int side_length(int version);                   // 17 + 4 * version
int total_codewords(int version);
int data_codewords(int version, Ecc ecc);
int byte_capacity(int version, Ecc ecc);        // byte-mode payload capacity

// Highest protection level (H, then Q, M, L) whose byte-mode capacity fits
// payload_len at the given version. Throws when even L does not fit.
Ecc strongest_ecc_fitting(int version, std::size_t payload_len);

// Byte-mode encode at a fixed version. mask in [-1, 7]; -1 selects the mask
// with the lowest penalty score.
EncodeResult encode_bytes(const Bytes& payload, int version, Ecc ecc,
                          int mask = -1);

// Full decode of a module grid: reads format information, unmasks, corrects
// errors per block, and parses the byte-mode segment. Returns nullopt when
// the grid is damaged beyond the code's correction radius; failure_stage, if
// given, is set to "format", "ecc" or "framing".
std::optional<DecodeResult> decode_matrix(const Matrix& m,
                                          std::string* failure_stage = nullptr);

// Map of modules that carry function patterns rather than data. Exposed for
// structural tests and for the tamper heuristic.
std::vector<std::uint8_t> function_module_map(int version);

}  // namespace metaseal::qr
