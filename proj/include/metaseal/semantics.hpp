#pragma once

#include <map>
#include <memory>
#include <string>

#include "metaseal/tensor.hpp"

namespace metaseal::semantics {

inline constexpr int kDefaultDigestBudget = 110;
inline constexpr int kMinDigestBudget = 8;

// Normalizes a caption into a signable digest: control characters and
// newlines become spaces, runs of whitespace collapse, and the result is
// truncated to at most `budget` bytes without splitting a UTF-8 code point.
// Throws if the cleaned caption is empty or the budget is below the minimum.
std::string make_digest(const std::string& caption,
                        int budget = kDefaultDigestBudget);

// Token-set Jaccard similarity over lowercased whitespace-separated tokens.
double similarity(const std::string& a, const std::string& b);

// Hex SHA-256 of the 8-bit quantized interleaved pixels. Stable key for the
// fixed-map provider and for caching.
std::string pixel_hash_hex(const Image& image);

struct ProviderConfig {
  std::string provider = "fixed_map_stub";  // or "external_model"
  // external_model: HTTP endpoint, e.g. "http://127.0.0.1:8089/caption".
  std::string endpoint;
  int timeout_ms = 5000;
  // fixed_map_stub: pixel-hash (hex) -> caption overrides.
  std::map<std::string, std::string> fixed_map;
};

// Parses {"provider": "...", "settings": {...}} into a ProviderConfig.
ProviderConfig provider_config_from_json(const std::string& json_text);

class CaptionProvider {
 public:
  virtual ~CaptionProvider() = default;
  // Returns a non-empty caption, or throws with diagnostics when the
  // provider cannot answer. Deterministic per image.
  virtual std::string caption(const Image& image) = 0;
  virtual std::string name() const = 0;
};

std::unique_ptr<CaptionProvider> make_provider(const ProviderConfig& config);

}  // namespace metaseal::semantics
