#include "metaseal/semantics.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "metaseal/common.hpp"
#include "metaseal/crypto.hpp"
#include "metaseal/image_io.hpp"

namespace metaseal::semantics {

namespace {

bool is_utf8_continuation(unsigned char byte) { return (byte & 0xC0) == 0x80; }

std::string clean_caption(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (unsigned char ch : raw) {
    const bool is_control = ch < 0x20 || ch == 0x7F;
    if (is_control || ch == ' ') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(ch));
  }
  return out;
}

std::string truncate_utf8(const std::string& text, size_t budget) {
  if (text.size() <= budget) return text;
  size_t cut = budget;
  while (cut > 0 && is_utf8_continuation(static_cast<unsigned char>(text[cut])))
    --cut;
  return text.substr(0, cut);
}

std::set<std::string> token_set(const std::string& text) {
  std::set<std::string> tokens;
  std::istringstream stream(text);
  std::string token;
  while (stream >> token) {
    for (char& ch : token)
      ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    tokens.insert(token);
  }
  return tokens;
}

class FixedMapProvider final : public CaptionProvider {
 public:
  explicit FixedMapProvider(std::map<std::string, std::string> map)
      : map_(std::move(map)) {}

  std::string caption(const Image& image) override {
    const std::string hash = pixel_hash_hex(image);
    auto it = map_.find(hash);
    if (it != map_.end()) {
      if (it->second.empty())
        throw Error("semantics", "fixed map holds an empty caption for " + hash);
      return it->second;
    }
    // Derived fallback keeps the provider total and deterministic.
    return "scene-" + hash.substr(0, 12);
  }

  std::string name() const override { return "fixed_map_stub"; }

 private:
  std::map<std::string, std::string> map_;
};

class ExternalModelProvider final : public CaptionProvider {
 public:
  ExternalModelProvider(std::string endpoint, int timeout_ms)
      : endpoint_(std::move(endpoint)), timeout_ms_(timeout_ms) {
    // Split "http://host:port/path" into origin + path.
    const std::string prefix = "http://";
    if (endpoint_.rfind(prefix, 0) != 0)
      throw Error("semantics",
                  "external_model endpoint must start with http://: " + endpoint_);
    const size_t path_pos = endpoint_.find('/', prefix.size());
    origin_ = path_pos == std::string::npos ? endpoint_
                                            : endpoint_.substr(0, path_pos);
    path_ = path_pos == std::string::npos ? "/" : endpoint_.substr(path_pos);
  }

  std::string caption(const Image& image) override {
    httplib::Client client(origin_);
    client.set_connection_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    client.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    const Bytes pixels = to_u8(image);
    httplib::Headers headers = {
        {"X-Image-Height", std::to_string(image.h)},
        {"X-Image-Width", std::to_string(image.w)},
        {"X-Image-Channels", std::to_string(image.c)},
    };
    auto res = client.Post(path_, headers,
                           reinterpret_cast<const char*>(pixels.data()),
                           pixels.size(), "application/octet-stream");
    if (!res)
      throw Error("semantics", "caption provider unavailable at " + endpoint_ +
                                   " (" + httplib::to_string(res.error()) + ")");
    if (res->status != 200)
      throw Error("semantics", "caption provider returned HTTP " +
                                   std::to_string(res->status) + " from " +
                                   endpoint_);
    if (clean_caption(res->body).empty())
      throw Error("semantics", "caption provider returned an empty caption");
    return res->body;
  }

  std::string name() const override { return "external_model"; }

 private:
  std::string endpoint_, origin_, path_;
  int timeout_ms_;
};

}  // namespace

std::string make_digest(const std::string& caption, int budget) {
  if (budget < kMinDigestBudget)
    throw Error("semantics", "digest budget must be at least " +
                                 std::to_string(kMinDigestBudget) + " bytes");
  const std::string cleaned = clean_caption(caption);
  if (cleaned.empty())
    throw Error("semantics", "caption is empty after normalization");
  return truncate_utf8(cleaned, static_cast<size_t>(budget));
}

double similarity(const std::string& a, const std::string& b) {
  const auto ta = token_set(a);
  const auto tb = token_set(b);
  if (ta.empty() && tb.empty()) return 1.0;
  size_t inter = 0;
  for (const auto& t : ta) inter += tb.count(t);
  const size_t uni = ta.size() + tb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::string pixel_hash_hex(const Image& image) {
  return to_hex(crypto::sha256(to_u8(image)));
}

ProviderConfig provider_config_from_json(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("semantics", std::string("provider config is not valid JSON: ") +
                                 e.what());
  }
  ProviderConfig config;
  config.provider = doc.value("provider", config.provider);
  const auto settings = doc.value("settings", nlohmann::json::object());
  config.endpoint = settings.value("endpoint", config.endpoint);
  config.timeout_ms = settings.value("timeout_ms", config.timeout_ms);
  if (settings.contains("fixed_map")) {
    for (const auto& [key, value] : settings.at("fixed_map").items())
      config.fixed_map[key] = value.get<std::string>();
  }
  return config;
}

std::unique_ptr<CaptionProvider> make_provider(const ProviderConfig& config) {
  if (config.provider == "fixed_map_stub")
    return std::make_unique<FixedMapProvider>(config.fixed_map);
  if (config.provider == "external_model") {
    if (config.endpoint.empty())
      throw Error("semantics", "external_model provider needs an endpoint");
    return std::make_unique<ExternalModelProvider>(config.endpoint,
                                                   config.timeout_ms);
  }
  throw Error("semantics", "unknown caption provider: " + config.provider);
}

}  // namespace metaseal::semantics
