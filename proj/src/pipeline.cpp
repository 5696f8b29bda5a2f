#include "metaseal/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "metaseal/common.hpp"
#include "metaseal/image_io.hpp"
#include "metaseal/metrics.hpp"
#include "metaseal/transforms.hpp"

namespace metaseal::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - start)
      .count();
}

std::string hex_of(const Bytes& data) { return to_hex(data); }

// Rejects unknown keys so config typos fail loudly instead of silently
// falling back to defaults.
void require_known_keys(const json& doc,
                        const std::vector<std::string>& known,
                        const std::string& where) {
  for (const auto& [key, value] : doc.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw Error("pipeline", "unknown config key '" + key + "' in " + where);
  }
}

trainer::NoisePool pool_from_json(const json& doc,
                                  trainer::NoisePool base) {
  require_known_keys(doc,
                     {"p_identity", "p_gaussian", "p_jpeg", "sigma_min",
                      "sigma_max", "quality_min", "quality_max"},
                     "train.pool");
  base.p_identity = doc.value("p_identity", base.p_identity);
  base.p_gaussian = doc.value("p_gaussian", base.p_gaussian);
  base.p_jpeg = doc.value("p_jpeg", base.p_jpeg);
  base.sigma_min = doc.value("sigma_min", base.sigma_min);
  base.sigma_max = doc.value("sigma_max", base.sigma_max);
  base.quality_min = doc.value("quality_min", base.quality_min);
  base.quality_max = doc.value("quality_max", base.quality_max);
  return base;
}

trainer::TrainConfig train_from_json(const json& doc,
                                     trainer::TrainConfig base) {
  require_known_keys(
      doc,
      {"steps", "batch_size", "patch_size", "learning_rate", "lambda_emb",
       "lambda_rec", "seed", "block_count", "clamp_constant", "qr_version",
       "render_size", "checkpoint_every", "log_every", "pool"},
      "train");
  base.steps = doc.value("steps", base.steps);
  base.batch_size = doc.value("batch_size", base.batch_size);
  base.patch_size = doc.value("patch_size", base.patch_size);
  base.learning_rate = doc.value("learning_rate", base.learning_rate);
  base.lambda_emb = doc.value("lambda_emb", base.lambda_emb);
  base.lambda_rec = doc.value("lambda_rec", base.lambda_rec);
  base.seed = doc.value("seed", base.seed);
  base.block_count = doc.value("block_count", base.block_count);
  base.clamp_constant = doc.value("clamp_constant", base.clamp_constant);
  base.qr_version = doc.value("qr_version", base.qr_version);
  base.render_size = doc.value("render_size", base.render_size);
  base.checkpoint_every = doc.value("checkpoint_every", base.checkpoint_every);
  base.log_every = doc.value("log_every", base.log_every);
  if (doc.contains("pool")) base.pool = pool_from_json(doc.at("pool"), base.pool);
  return base;
}

int env_int(const char* name, int fallback) {
  const char* raw = std::getenv(name);
  if (!raw || !*raw) return fallback;
  try {
    return std::stoi(raw);
  } catch (const std::exception&) {
    throw Error("pipeline", std::string(name) + " is not an integer: " + raw);
  }
}

std::string env_str(const char* name, const std::string& fallback) {
  const char* raw = std::getenv(name);
  return (raw && *raw) ? std::string(raw) : fallback;
}

// ---------------------------------------------------------------------------
// Schema subset validator.

bool type_matches(const json& value, const std::string& type) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "number") return value.is_number();
  if (type == "integer") return value.is_number_integer();
  if (type == "boolean") return value.is_boolean();
  if (type == "null") return value.is_null();
  return false;
}

bool validate_against(const json& value, const json& schema, std::string path,
                      std::string* why) {
  auto fail = [&](const std::string& reason) {
    if (why) *why = path + ": " + reason;
    return false;
  };

  if (schema.contains("type")) {
    const json& t = schema.at("type");
    bool ok = false;
    if (t.is_string()) {
      ok = type_matches(value, t.get<std::string>());
    } else if (t.is_array()) {
      for (const auto& option : t)
        if (type_matches(value, option.get<std::string>())) {
          ok = true;
          break;
        }
    }
    if (!ok) return fail("type mismatch, got " + std::string(value.type_name()));
  }
  if (schema.contains("enum")) {
    bool ok = false;
    for (const auto& option : schema.at("enum"))
      if (value == option) {
        ok = true;
        break;
      }
    if (!ok) return fail("value not in enum");
  }
  if (value.is_number()) {
    if (schema.contains("minimum") &&
        value.get<double>() < schema.at("minimum").get<double>())
      return fail("below minimum");
    if (schema.contains("maximum") &&
        value.get<double>() > schema.at("maximum").get<double>())
      return fail("above maximum");
  }
  if (value.is_object()) {
    if (schema.contains("required"))
      for (const auto& name : schema.at("required"))
        if (!value.contains(name.get<std::string>()))
          return fail("missing required field " + name.get<std::string>());
    const json props = schema.value("properties", json::object());
    for (const auto& [key, sub] : value.items()) {
      if (props.contains(key)) {
        if (!validate_against(sub, props.at(key), path + "/" + key, why))
          return false;
      } else if (schema.value("additionalProperties", true) == json(false)) {
        return fail("unexpected field " + key);
      }
    }
  }
  if (value.is_array() && schema.contains("items")) {
    for (std::size_t i = 0; i < value.size(); ++i)
      if (!validate_against(value.at(i), schema.at("items"),
                            path + "/" + std::to_string(i), why))
        return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Synthetic covers: layered value noise + gradient + soft shapes.

// Bilinearly upsampled lattice noise in [0, 1].
void add_value_noise(Image& img, int lattice, double amplitude, Rng& rng) {
  std::vector<float> grid(static_cast<std::size_t>(lattice + 1) *
                          (lattice + 1) * img.c);
  for (float& v : grid) v = static_cast<float>(rng.uniform());
  auto lattice_at = [&](int ch, int gy, int gx) {
    return grid[(static_cast<std::size_t>(ch) * (lattice + 1) + gy) *
                    (lattice + 1) +
                gx];
  };
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        const double fy = static_cast<double>(y) / img.h * lattice;
        const double fx = static_cast<double>(x) / img.w * lattice;
        const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
        const double wy = fy - y0, wx = fx - x0;
        const double top = lattice_at(ch, y0, x0) * (1.0 - wx) +
                           lattice_at(ch, y0, x0 + 1) * wx;
        const double bot = lattice_at(ch, y0 + 1, x0) * (1.0 - wx) +
                           lattice_at(ch, y0 + 1, x0 + 1) * wx;
        img.at(ch, y, x) += static_cast<float>(
            amplitude * (top * (1.0 - wy) + bot * wy - 0.5));
      }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration.

ToolkitConfig default_config() { return ToolkitConfig{}; }

std::optional<qr::Ecc> parse_ecc_level(const std::string& name) {
  if (name == "auto" || name.empty()) return std::nullopt;
  if (name == "L") return qr::Ecc::L;
  if (name == "M") return qr::Ecc::M;
  if (name == "Q") return qr::Ecc::Q;
  if (name == "H") return qr::Ecc::H;
  throw Error("pipeline", "unknown ecc level '" + name + "' (auto|L|M|Q|H)");
}

inn::ZPolicy parse_z_policy(const std::string& name) {
  if (name == "zeros") return inn::ZPolicy::kZeros;
  if (name == "seeded_gaussian") return inn::ZPolicy::kSeededGaussian;
  throw Error("pipeline",
              "unknown z policy '" + name + "' (zeros|seeded_gaussian)");
}

int min_resolution_for_version(int qr_version) {
  const int modules = qr::side_length(qr_version);
  return (modules + 8) * 4;  // quiet zone of 4 on each side, scale >= 4
}

ToolkitConfig config_from_json_text(const std::string& text,
                                    ToolkitConfig base) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("pipeline", std::string("config is not valid JSON: ") + e.what());
  }
  require_known_keys(doc,
                     {"image_resolution", "qr_version", "ecc_level",
                      "digest_budget", "semantic_threshold", "z_policy",
                      "z_seed", "dump_recovered", "provider", "train", "bench",
                      "paths"},
                     "config");
  base.image_resolution = doc.value("image_resolution", base.image_resolution);
  base.qr_version = doc.value("qr_version", base.qr_version);
  base.ecc_level = doc.value("ecc_level", base.ecc_level);
  base.digest_budget = doc.value("digest_budget", base.digest_budget);
  base.semantic_threshold =
      doc.value("semantic_threshold", base.semantic_threshold);
  base.z_policy = doc.value("z_policy", base.z_policy);
  base.z_seed = doc.value("z_seed", base.z_seed);
  base.dump_recovered = doc.value("dump_recovered", base.dump_recovered);
  if (doc.contains("provider")) {
    base.provider = semantics::provider_config_from_json(doc.at("provider").dump());
    base.provider_configured = true;
  }
  if (doc.contains("train")) base.train = train_from_json(doc.at("train"), base.train);
  if (doc.contains("bench")) {
    const json& b = doc.at("bench");
    require_known_keys(b,
                       {"resolutions", "images", "jpeg_qualities",
                        "noise_sigmas", "blur_sigmas"},
                       "bench");
    if (b.contains("resolutions"))
      base.bench.resolutions = b.at("resolutions").get<std::vector<int>>();
    base.bench.images = b.value("images", base.bench.images);
    if (b.contains("jpeg_qualities"))
      base.bench.jpeg_qualities = b.at("jpeg_qualities").get<std::vector<int>>();
    if (b.contains("noise_sigmas"))
      base.bench.noise_sigmas = b.at("noise_sigmas").get<std::vector<double>>();
    if (b.contains("blur_sigmas"))
      base.bench.blur_sigmas = b.at("blur_sigmas").get<std::vector<double>>();
  }
  if (doc.contains("paths")) {
    const json& p = doc.at("paths");
    require_known_keys(p, {"checkpoint", "registry", "keys_dir", "out_dir"},
                       "paths");
    base.paths.checkpoint = p.value("checkpoint", base.paths.checkpoint);
    base.paths.registry = p.value("registry", base.paths.registry);
    base.paths.keys_dir = p.value("keys_dir", base.paths.keys_dir);
    base.paths.out_dir = p.value("out_dir", base.paths.out_dir);
  }
  return base;
}

void apply_env_overrides(ToolkitConfig& config) {
  config.paths.checkpoint = env_str("METASEAL_CHECKPOINT", config.paths.checkpoint);
  config.paths.registry = env_str("METASEAL_REGISTRY", config.paths.registry);
  config.paths.keys_dir = env_str("METASEAL_KEYS_DIR", config.paths.keys_dir);
  config.paths.out_dir = env_str("METASEAL_OUT_DIR", config.paths.out_dir);
  config.image_resolution = env_int("METASEAL_RESOLUTION", config.image_resolution);
  config.qr_version = env_int("METASEAL_QR_VERSION", config.qr_version);
  config.ecc_level = env_str("METASEAL_ECC_LEVEL", config.ecc_level);
  config.z_policy = env_str("METASEAL_Z_POLICY", config.z_policy);
  config.digest_budget = env_int("METASEAL_DIGEST_BUDGET", config.digest_budget);
}

ToolkitConfig load_config(const std::string& json_path) {
  ToolkitConfig config = default_config();
  if (!json_path.empty()) {
    std::ifstream in(json_path);
    if (!in) throw Error("pipeline", "cannot open config file: " + json_path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    config = config_from_json_text(buffer.str(), std::move(config));
  }
  apply_env_overrides(config);
  validate_config(config);
  return config;
}

void validate_config(const ToolkitConfig& config) {
  if (config.image_resolution % 2 != 0)
    throw Error("pipeline", "image resolution must be even");
  const int min_res = min_resolution_for_version(config.qr_version);
  if (config.image_resolution < min_res)
    throw Error("pipeline", "resolution " +
                                std::to_string(config.image_resolution) +
                                " below the minimum " +
                                std::to_string(min_res) + " for pattern version " +
                                std::to_string(config.qr_version));
  parse_ecc_level(config.ecc_level);
  parse_z_policy(config.z_policy);
  if (config.digest_budget < semantics::kMinDigestBudget ||
      config.digest_budget > pattern::kDigestBudget)
    throw Error("pipeline", "digest budget out of range");
}

// ---------------------------------------------------------------------------
// Reports.

std::string report_to_json(const VerificationReport& report) {
  json doc = {
      {"signature_valid", report.signature_valid},
      {"decode_status", report.decode_status},
      {"recovered_digest", report.recovered_digest
                               ? json(*report.recovered_digest)
                               : json(nullptr)},
      {"recovered_signature", report.recovered_signature
                                  ? json(hex_of(*report.recovered_signature))
                                  : json(nullptr)},
      {"semantic_similarity", report.semantic_similarity
                                  ? json(*report.semantic_similarity)
                                  : json(nullptr)},
      {"tamper_score", report.tamper_score},
      {"key_id", report.key_id},
      {"timings",
       {{"extract_ms", report.timings.extract_ms},
        {"decode_ms", report.timings.decode_ms},
        {"verify_ms", report.timings.verify_ms}}},
      {"diagnostics", report.diagnostics},
  };
  return doc.dump(2);
}

std::string report_to_json(const EmbedReport& report) {
  json doc = {
      {"input_path", report.input_path},
      {"output_path", report.output_path},
      {"key_id", report.key_id},
      {"digest", report.digest},
      {"signature", hex_of(report.signature)},
      {"psnr", report.psnr},
      {"ssim", report.ssim},
      {"embed_ms", report.embed_ms},
  };
  return doc.dump(2);
}

bool json_matches_schema(const std::string& json_text,
                         const std::string& schema_text, std::string* why) {
  json value, schema;
  try {
    value = json::parse(json_text);
    schema = json::parse(schema_text);
  } catch (const json::exception& e) {
    if (why) *why = std::string("parse failure: ") + e.what();
    return false;
  }
  return validate_against(value, schema, "#", why);
}

// ---------------------------------------------------------------------------
// Corpus.

Image synthesize_cover(int resolution, std::uint64_t seed) {
  if (resolution < 8) throw Error("pipeline", "cover resolution too small");
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL);
  Image img(resolution, resolution, 3);

  // Shared base tone.
  const float base[3] = {static_cast<float>(0.35 + 0.3 * rng.uniform()),
                         static_cast<float>(0.35 + 0.3 * rng.uniform()),
                         static_cast<float>(0.35 + 0.3 * rng.uniform())};
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < resolution; ++y)
      for (int x = 0; x < resolution; ++x) img.at(ch, y, x) = base[ch];

  // Directional gradient.
  const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979);
  const double gx = std::cos(angle), gy = std::sin(angle);
  const double strength = rng.uniform(0.05, 0.25);
  for (int ch = 0; ch < 3; ++ch) {
    const double channel_gain = rng.uniform(0.5, 1.0);
    for (int y = 0; y < resolution; ++y)
      for (int x = 0; x < resolution; ++x) {
        const double u = (static_cast<double>(x) / resolution - 0.5) * gx +
                         (static_cast<double>(y) / resolution - 0.5) * gy;
        img.at(ch, y, x) += static_cast<float>(strength * channel_gain * u);
      }
  }

  // Layered value noise, coarse to fine.
  add_value_noise(img, 4, 0.30, rng);
  add_value_noise(img, 9, 0.15, rng);
  add_value_noise(img, 23, 0.08, rng);

  // A few soft shapes: filled axis-aligned rectangles and disks.
  const int shapes = 2 + static_cast<int>(rng.uniform_index(3));
  for (int s = 0; s < shapes; ++s) {
    const bool disk = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.15, 0.85) * resolution;
    const double cy = rng.uniform(0.15, 0.85) * resolution;
    const double radius = rng.uniform(0.06, 0.22) * resolution;
    const float alpha = static_cast<float>(rng.uniform(0.25, 0.6));
    float color[3];
    for (float& c : color) c = static_cast<float>(rng.uniform(0.1, 0.9));
    const int y0 = std::max(0, static_cast<int>(cy - radius));
    const int y1 = std::min(resolution - 1, static_cast<int>(cy + radius));
    const int x0 = std::max(0, static_cast<int>(cx - radius));
    const int x1 = std::min(resolution - 1, static_cast<int>(cx + radius));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (disk) {
          const double dx = x - cx, dy = y - cy;
          if (dx * dx + dy * dy > radius * radius) continue;
        }
        for (int ch = 0; ch < 3; ++ch)
          img.at(ch, y, x) =
              (1.0f - alpha) * img.at(ch, y, x) + alpha * color[ch];
      }
  }

  for (float& v : img.data) v = clamp01(v);
  return img;
}

void make_corpus(const std::string& directory, int count, int resolution,
                 std::uint64_t seed) {
  if (count <= 0) throw Error("pipeline", "corpus count must be positive");
  fs::create_directories(directory);
  for (int i = 0; i < count; ++i) {
    const Image img = synthesize_cover(resolution, seed + static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d.png", i);
    save_png((fs::path(directory) / name).string(), img);
  }
}

std::vector<Image> ingest_corpus(const std::string& directory, int resolution) {
  if (!fs::is_directory(directory))
    throw Error("pipeline", "corpus directory does not exist: " + directory);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(directory))
    if (entry.is_regular_file()) files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());

  std::vector<Image> corpus;
  for (const std::string& file : files) {
    Image img;
    try {
      img = load_image(file);
    } catch (const Error& e) {
      std::cerr << "warning: skipping undecodable file " << file << " ("
                << e.what() << ")\n";
      continue;
    }
    // Center-crop to square, then resize.
    const int side = std::min(img.h, img.w);
    const int oy = (img.h - side) / 2, ox = (img.w - side) / 2;
    Image square(side, side, img.c);
    for (int ch = 0; ch < img.c; ++ch)
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          square.at(ch, y, x) = img.at(ch, oy + y, ox + x);
    corpus.push_back(transforms::resize_bilinear(square, resolution, resolution));
  }
  if (corpus.empty())
    throw Error("pipeline", "no decodable images in " + directory);
  return corpus;
}

// ---------------------------------------------------------------------------
// Toolkit.

Toolkit::Toolkit(ToolkitConfig config) : config_(std::move(config)) {
  validate_config(config_);
}

const inn::InnWeights& Toolkit::weights() const {
  if (!weights_loaded_) {
    if (!fs::exists(config_.paths.checkpoint))
      throw Error("pipeline",
                  "checkpoint not found: " + config_.paths.checkpoint);
    weights_ = trainer::load_checkpoint(config_.paths.checkpoint);
    weights_loaded_ = true;
  }
  return weights_;
}

semantics::CaptionProvider& Toolkit::provider() const {
  if (!provider_) provider_ = semantics::make_provider(config_.provider);
  return *provider_;
}

Image Toolkit::embed(const Image& cover, const std::string& key_id,
                     EmbedReport* report,
                     pattern::VisualPattern* pattern_out) const {
  if (cover.c != 3)
    throw Error("pipeline", "embedding expects a 3-channel cover");
  if (cover.h % 2 != 0 || cover.w % 2 != 0)
    throw Error("pipeline", "embedding expects even image dimensions");
  const int min_res = min_resolution_for_version(config_.qr_version);
  if (std::min(cover.h, cover.w) < min_res)
    throw Error("pipeline",
                "image too small to carry pattern version " +
                    std::to_string(config_.qr_version) + " (needs " +
                    std::to_string(min_res) + " pixels per side)");

  const auto start = std::chrono::steady_clock::now();
  const std::string caption = provider().caption(cover);
  const std::string digest =
      semantics::make_digest(caption, config_.digest_budget);
  const crypto::KeyPair keys =
      crypto::load_key_pair(config_.paths.keys_dir, key_id);
  const Bytes digest_bytes(digest.begin(), digest.end());
  const Bytes signature = crypto::sign(keys.private_scalar, digest_bytes);

  const pattern::VisualPattern pat = pattern::encode_pattern(
      digest_bytes, signature, config_.qr_version,
      parse_ecc_level(config_.ecc_level));
  if (pattern_out) *pattern_out = pat;
  const Image secret = pattern::render_pattern(pat, cover.h, cover.w);

  const inn::EmbedResult embedded = inn::embed(cover, secret, weights());
  // Quantize exactly as the lossless writer will, so in-memory metrics match
  // the on-disk artifact.
  Image out = quantize_u8(embedded.watermarked);

  if (report) {
    report->key_id = key_id;
    report->digest = digest;
    report->signature = signature;
    report->psnr = metrics::psnr(cover, out);
    report->ssim = metrics::ssim(cover, out);
    report->embed_ms = elapsed_ms(start);
  }
  return out;
}

EmbedReport Toolkit::embed_image(const std::string& image_path,
                                 const std::string& key_id,
                                 const std::string& out_path) const {
  if (!is_lossless_raster_path(out_path))
    throw Error("pipeline",
                "watermarked output must be lossless (use .png): " + out_path);
  const Image cover = load_image(image_path);
  EmbedReport report;
  report.input_path = image_path;
  report.output_path = out_path;
  const Image watermarked = embed(cover, key_id, &report);
  const fs::path parent = fs::path(out_path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  save_png(out_path, watermarked);
  std::ofstream out(out_path + ".embed.json", std::ios::trunc);
  if (!out) throw Error("pipeline", "cannot write embed report");
  out << report_to_json(report) << '\n';
  return report;
}

VerificationReport Toolkit::verify(const Image& image,
                                   const std::string& key_id) const {
  // Key and checkpoint problems abort; unverifiable content never does.
  const crypto::RegistryEntry entry =
      crypto::registry_lookup(config_.paths.registry, key_id);
  const inn::InnWeights& w = weights();

  VerificationReport report;
  report.key_id = key_id;

  Image recovered;
  {
    const auto start = std::chrono::steady_clock::now();
    try {
      const inn::ExtractResult extracted = inn::extract(
          image, w, parse_z_policy(config_.z_policy), config_.z_seed);
      recovered = extracted.recovered_secret;
    } catch (const Error& e) {
      report.timings.extract_ms = elapsed_ms(start);
      report.diagnostics = e.what();
      return report;
    }
    report.timings.extract_ms = elapsed_ms(start);
  }

  report.tamper_score = pattern::tamper_score(recovered, config_.qr_version);

  pattern::DecodeFailure failure = pattern::DecodeFailure::kNone;
  std::optional<pattern::DecodedPayload> decoded;
  {
    const auto start = std::chrono::steady_clock::now();
    decoded = pattern::decode_recovered(recovered, config_.qr_version, &failure);
    report.timings.decode_ms = elapsed_ms(start);
  }
  if (!decoded) {
    report.decode_status = "decode_failure";
    report.diagnostics =
        std::string("decode: ") + pattern::decode_failure_name(failure);
    return report;
  }

  report.decode_status = "ok";
  report.recovered_digest =
      std::string(decoded->digest.begin(), decoded->digest.end());
  report.recovered_signature = decoded->signature;
  {
    const auto start = std::chrono::steady_clock::now();
    report.signature_valid =
        crypto::verify(entry.public_point, decoded->digest, decoded->signature);
    report.timings.verify_ms = elapsed_ms(start);
  }
  if (!report.signature_valid)
    report.diagnostics = "verify: signature rejected under key " + key_id;

  if (config_.provider_configured) {
    try {
      const std::string caption = provider().caption(image);
      const std::string digest =
          semantics::make_digest(caption, config_.digest_budget);
      report.semantic_similarity =
          semantics::similarity(*report.recovered_digest, digest);
    } catch (const Error& e) {
      report.diagnostics = report.diagnostics.empty()
                               ? std::string("semantics: ") + e.what()
                               : report.diagnostics;
    }
  }
  return report;
}

bool Toolkit::accepted(const VerificationReport& report) const {
  if (!report.signature_valid) return false;
  if (config_.semantic_threshold < 0.0) return true;
  if (!report.semantic_similarity) return true;  // gate needs a provider
  return *report.semantic_similarity >= config_.semantic_threshold;
}

VerificationReport Toolkit::verify_image(const std::string& image_path,
                                         const std::string& key_id) const {
  const Image image = load_image(image_path);
  VerificationReport report = verify(image, key_id);
  if (config_.dump_recovered) {
    // Persist the recovered pattern for visual inspection.
    const inn::ExtractResult extracted = inn::extract(
        image, weights(), parse_z_policy(config_.z_policy), config_.z_seed);
    Image dump = extracted.recovered_secret;
    for (float& v : dump.data) v = clamp01(v);
    save_png(image_path + ".recovered.png", dump);
  }
  return report;
}

// ---------------------------------------------------------------------------

crypto::KeyPair keygen(const ToolkitConfig& config, const std::string& key_id,
                       const std::string& owner) {
  fs::create_directories(config.paths.keys_dir);
  const fs::path registry_dir = fs::path(config.paths.registry).parent_path();
  if (!registry_dir.empty()) fs::create_directories(registry_dir);
  crypto::KeyPair pair = crypto::keygen(key_id);
  crypto::save_key_files(pair, config.paths.keys_dir);
  crypto::registry_add(config.paths.registry,
                       {key_id, owner, pair.public_point});
  return pair;
}

trainer::TrainResult train_toolkit(const ToolkitConfig& config,
                                   const std::string& corpus_dir,
                                   const std::string& metrics_path) {
  const std::vector<Image> corpus =
      ingest_corpus(corpus_dir, config.image_resolution);
  const fs::path checkpoint_dir =
      fs::path(config.paths.checkpoint).parent_path();
  if (!checkpoint_dir.empty()) fs::create_directories(checkpoint_dir);
  return trainer::train(config.train, corpus, config.paths.checkpoint,
                        metrics_path);
}

// ---------------------------------------------------------------------------
// Benchmarks.

namespace {

Image resize_to(const Image& img, int resolution) {
  const int side = std::min(img.h, img.w);
  const int oy = (img.h - side) / 2, ox = (img.w - side) / 2;
  Image square(side, side, img.c);
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        square.at(ch, y, x) = img.at(ch, oy + y, ox + x);
  return transforms::resize_bilinear(square, resolution, resolution);
}

}  // namespace

std::string bench_table_text(const BenchResult& result) {
  std::ostringstream out;
  out << "Resolution   Payload      PSNR      SSIM    RecAcc    VerAcc"
         "   Embed(ms)  Verify(ms)\n";
  char line[160];
  for (const BenchRow& row : result.rows) {
    std::snprintf(line, sizeof(line),
                  "%10d %9d %9.2f %9.4f %9.4f %9.4f %11.1f %11.1f\n",
                  row.resolution, row.payload_modules, row.psnr, row.ssim,
                  row.rec_acc, row.ver_acc, row.embed_ms, row.verify_ms);
    out << line;
  }
  return out.str();
}

BenchResult bench(const Toolkit& toolkit, const std::string& corpus_dir,
                  const std::string& key_id, const std::string& out_dir,
                  std::string* table_text) {
  const ToolkitConfig& config = toolkit.config();
  fs::create_directories(out_dir);
  BenchResult result;

  // Resolution sweep.
  for (int resolution : config.bench.resolutions) {
    if (resolution < min_resolution_for_version(config.qr_version))
      throw Error("pipeline", "bench resolution " + std::to_string(resolution) +
                                  " below pattern minimum");
    std::vector<Image> covers = ingest_corpus(corpus_dir, resolution);
    if (static_cast<int>(covers.size()) > config.bench.images)
      covers.resize(config.bench.images);

    BenchRow row;
    row.resolution = resolution;
    const int side = qr::side_length(config.qr_version);
    row.payload_modules = side * side;
    std::vector<bool> valid;
    for (const Image& cover : covers) {
      EmbedReport embed_report;
      pattern::VisualPattern truth;
      const Image watermarked =
          toolkit.embed(cover, key_id, &embed_report, &truth);
      row.psnr += embed_report.psnr;
      row.ssim += embed_report.ssim;
      row.embed_ms += embed_report.embed_ms;

      const auto start = std::chrono::steady_clock::now();
      const VerificationReport verify_report =
          toolkit.verify(watermarked, key_id);
      row.verify_ms += elapsed_ms(start);
      valid.push_back(toolkit.accepted(verify_report));

      const inn::ExtractResult extracted =
          inn::extract(watermarked, toolkit.weights(),
                       parse_z_policy(config.z_policy), config.z_seed);
      const pattern::VisualPattern recovered = pattern::binarize_recovered(
          extracted.recovered_secret, config.qr_version);
      row.rec_acc += metrics::rec_acc_pattern(recovered.modules, truth.modules);
    }
    const double n = static_cast<double>(covers.size());
    row.psnr /= n;
    row.ssim /= n;
    row.embed_ms /= n;
    row.verify_ms /= n;
    row.rec_acc /= n;
    row.ver_acc = metrics::ver_acc(valid);
    result.rows.push_back(row);
  }

  // Robustness curves at the working resolution.
  {
    std::vector<Image> covers =
        ingest_corpus(corpus_dir, config.image_resolution);
    if (static_cast<int>(covers.size()) > config.bench.images)
      covers.resize(config.bench.images);
    std::vector<Image> watermarked;
    for (const Image& cover : covers)
      watermarked.push_back(toolkit.embed(cover, key_id));

    auto sweep_ver_acc = [&](const transforms::TransformSpec& spec,
                             std::uint64_t seed) {
      std::vector<bool> valid;
      for (const Image& wm : watermarked) {
        const Image distorted = transforms::apply(wm, spec, seed);
        valid.push_back(toolkit.accepted(toolkit.verify(distorted, key_id)));
      }
      return metrics::ver_acc(valid);
    };

    for (int quality : config.bench.jpeg_qualities) {
      transforms::TransformSpec spec;
      spec.kind = transforms::Kind::kJpeg;
      spec.quality = quality;
      result.curve.push_back(
          {"jpeg", static_cast<double>(quality), sweep_ver_acc(spec, 11)});
    }
    for (double sigma : config.bench.noise_sigmas) {
      transforms::TransformSpec spec;
      spec.kind = transforms::Kind::kGaussianNoise;
      spec.intensity = sigma;
      result.curve.push_back({"gaussian_noise", sigma, sweep_ver_acc(spec, 12)});
    }
    for (double sigma : config.bench.blur_sigmas) {
      transforms::TransformSpec spec;
      spec.kind = transforms::Kind::kGaussianBlur;
      spec.kernel = 3;
      spec.sigma = sigma;
      result.curve.push_back({"gaussian_blur", sigma, sweep_ver_acc(spec, 13)});
    }
  }

  // Persist artifacts.
  {
    json rows = json::array();
    for (const BenchRow& row : result.rows)
      rows.push_back({{"resolution", row.resolution},
                      {"payload_modules", row.payload_modules},
                      {"psnr", row.psnr},
                      {"ssim", row.ssim},
                      {"rec_acc", row.rec_acc},
                      {"ver_acc", row.ver_acc},
                      {"embed_ms", row.embed_ms},
                      {"verify_ms", row.verify_ms}});
    json curve = json::array();
    for (const RobustnessPoint& point : result.curve)
      curve.push_back({{"transform", point.transform},
                       {"parameter", point.parameter},
                       {"ver_acc", point.ver_acc}});
    json doc = {{"rows", rows}, {"curve", curve},
                {"note", "timings are per single image; batch-amortized "
                         "timings would be lower"}};
    std::ofstream out(fs::path(out_dir) / "bench.json", std::ios::trunc);
    if (!out) throw Error("pipeline", "cannot write bench.json");
    out << doc.dump(2) << '\n';

    std::ofstream csv(fs::path(out_dir) / "robustness_curve.csv",
                      std::ios::trunc);
    if (!csv) throw Error("pipeline", "cannot write robustness_curve.csv");
    csv << "transform,parameter,ver_acc\n";
    for (const RobustnessPoint& point : result.curve)
      csv << point.transform << ',' << point.parameter << ','
          << point.ver_acc << '\n';

    std::ofstream table(fs::path(out_dir) / "bench_table.txt", std::ios::trunc);
    table << bench_table_text(result);
  }
  if (table_text) *table_text = bench_table_text(result);
  return result;
}

}  // namespace metaseal::pipeline
