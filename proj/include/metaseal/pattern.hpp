#pragma once

#include <optional>
#include <string>

#include "metaseal/qr.hpp"
#include "metaseal/tensor.hpp"

namespace metaseal::pattern {

// Maximum semantic digest length carried in a pattern payload.
constexpr int kDigestBudget = 110;
constexpr int kSignatureLength = 64;
constexpr std::uint8_t kFormatVersion = 1;

struct VisualPattern {
  qr::Matrix modules;
  int version = 0;
  qr::Ecc ecc = qr::Ecc::M;
};

enum class DecodeFailure {
  kNone,
  kFormatUnreadable,   // finder/format information not recoverable
  kEccOverflow,        // errors beyond the Reed-Solomon radius
  kFramingMismatch,    // payload recovered but framing bytes are wrong
};

const char* decode_failure_name(DecodeFailure f);

struct DecodedPayload {
  Bytes digest;
  Bytes signature;
  int corrected_symbols = 0;
};

// Serializes [format_version][digest_length][digest][signature] and encodes
// it as a pattern. When ecc is unset the strongest level that fits is used.
VisualPattern encode_pattern(const Bytes& digest, const Bytes& signature,
                             int version,
                             std::optional<qr::Ecc> ecc = std::nullopt);

// Inverse of encode_pattern, tolerant to symbol errors within the
// per-block correction radius.
std::optional<DecodedPayload> decode_pattern(const VisualPattern& pattern,
                                             DecodeFailure* failure = nullptr);

// Largest digest that fits a given configuration.
int max_digest_bytes(int version, qr::Ecc ecc);

// Nearest-neighbor upscale with a 4-module quiet zone, centered on a light
// canvas. Dark modules are 0, light 1, replicated across three channels.
Image render_pattern(const VisualPattern& pattern, int height, int width);

// Recovers a module matrix from a degraded rendering: channel average,
// per-module mean pooling, min-max normalization, fixed 0.5 threshold.
// otsu selects a histogram-derived threshold instead; decode_recovered tries
// the fixed threshold first and falls back to Otsu.
VisualPattern binarize_recovered(const Image& secret, int version,
                                 bool otsu = false);

std::optional<DecodedPayload> decode_recovered(const Image& secret,
                                               int version,
                                               DecodeFailure* failure = nullptr);

// Fraction of the three finder patterns whose 1:1:3:1:1 scan-line profile
// survives, within 20% per-segment tolerance. 1.0 = pristine, 0.0 = erased.
double tamper_score(const Image& secret, int version);

}  // namespace metaseal::pattern
