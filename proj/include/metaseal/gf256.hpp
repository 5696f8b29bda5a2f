#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "metaseal/common.hpp"

namespace metaseal::gf256 {

// GF(2^8) with reduction polynomial x^8 + x^4 + x^3 + x^2 + 1 (0x11D) and
// generator element 0x02, the field used by QR error correction.
std::uint8_t mul(std::uint8_t a, std::uint8_t b);
std::uint8_t exp(int power);              // alpha^power, power taken mod 255
std::uint8_t inverse(std::uint8_t a);     // a != 0

// Generator polynomial with roots alpha^0 .. alpha^(degree-1), returned
// highest-order coefficient first with a leading 1.
std::vector<std::uint8_t> generator_poly(int degree);

struct RsCode {
  int n;  // total symbols per codeword
  int k;  // data symbols per codeword

  RsCode(int n_, int k_);

  int parity() const { return n - k; }
  int distance() const { return n - k + 1; }
  int correctable() const { return (n - k) / 2; }

  // data.size() == k; returns the n-symbol systematic codeword (data first).
  std::vector<std::uint8_t> encode(const std::vector<std::uint8_t>& data) const;

  // Corrects up to correctable() symbol errors. Returns the k data symbols,
  // or nullopt when the error pattern is beyond the decoding radius.
  std::optional<std::vector<std::uint8_t>> decode(
      const std::vector<std::uint8_t>& codeword) const;
};

}  // namespace metaseal::gf256
