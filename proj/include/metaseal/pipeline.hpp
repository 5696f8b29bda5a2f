#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "metaseal/crypto.hpp"
#include "metaseal/inn.hpp"
#include "metaseal/pattern.hpp"
#include "metaseal/semantics.hpp"
#include "metaseal/tensor.hpp"
#include "metaseal/trainer.hpp"

namespace metaseal::pipeline {

// ---------------------------------------------------------------------------
// Configuration. Values resolve with precedence: caller override (CLI flag)
// > METASEAL_* environment variable > JSON config file > built-in default.

struct PathsBlock {
  std::string checkpoint = "assets/checkpoints/main_v9.ckpt";
  std::string registry = "keys/registry.json";
  std::string keys_dir = "keys";
  std::string out_dir = ".";
};

struct BenchBlock {
  std::vector<int> resolutions = {256, 512, 1024};
  int images = 8;  // corpus prefix used per table row
  std::vector<int> jpeg_qualities = {99, 95, 90, 84, 80, 70, 60};
  std::vector<double> noise_sigmas = {0.01, 0.02, 0.03, 0.05, 0.08};
  std::vector<double> blur_sigmas = {0.3, 0.5, 0.7, 1.0, 1.5};
};

struct ToolkitConfig {
  int image_resolution = 256;
  int qr_version = 9;
  std::string ecc_level = "auto";  // auto | L | M | Q | H
  int digest_budget = semantics::kDefaultDigestBudget;
  // Minimum semantic similarity for accepted() when a provider is
  // configured; negative disables the gate (paper-headline semantics:
  // signature validity alone).
  double semantic_threshold = -1.0;
  std::string z_policy = "zeros";  // zeros | seeded_gaussian
  std::uint64_t z_seed = 0;
  bool dump_recovered = false;
  bool provider_configured = false;  // true once a provider block is given
  semantics::ProviderConfig provider;
  trainer::TrainConfig train;
  BenchBlock bench;
  PathsBlock paths;
};

ToolkitConfig default_config();

// Applies a JSON document on top of `base`. Unknown keys are rejected.
ToolkitConfig config_from_json_text(const std::string& text,
                                    ToolkitConfig base);

// defaults -> optional JSON file -> METASEAL_* environment overrides.
ToolkitConfig load_config(const std::string& json_path = "");

// Reads METASEAL_CHECKPOINT, METASEAL_REGISTRY, METASEAL_KEYS_DIR,
// METASEAL_OUT_DIR, METASEAL_RESOLUTION, METASEAL_QR_VERSION,
// METASEAL_ECC_LEVEL, METASEAL_Z_POLICY, METASEAL_DIGEST_BUDGET.
void apply_env_overrides(ToolkitConfig& config);

// Throws on violated invariants (odd resolution, resolution below the
// smallest renderable size for the pattern version, bad enum strings).
void validate_config(const ToolkitConfig& config);

std::optional<qr::Ecc> parse_ecc_level(const std::string& name);
inn::ZPolicy parse_z_policy(const std::string& name);

// Smallest square canvas that can render the given pattern version.
int min_resolution_for_version(int qr_version);

// ---------------------------------------------------------------------------
// Reports.

struct Timings {
  double extract_ms = 0.0;
  double decode_ms = 0.0;
  double verify_ms = 0.0;
};

struct VerificationReport {
  bool signature_valid = false;
  std::string decode_status = "decode_failure";  // "ok" | "decode_failure"
  std::optional<std::string> recovered_digest;
  std::optional<Bytes> recovered_signature;
  std::optional<double> semantic_similarity;
  double tamper_score = 0.0;
  std::string key_id;
  Timings timings;
  std::string diagnostics;  // stage-tagged failure note, empty when clean
};

struct EmbedReport {
  std::string input_path;
  std::string output_path;
  std::string key_id;
  std::string digest;
  Bytes signature;
  double psnr = 0.0;
  double ssim = 0.0;
  double embed_ms = 0.0;
};

std::string report_to_json(const VerificationReport& report);
std::string report_to_json(const EmbedReport& report);

// Minimal structural validator covering the schema subset used by
// schemas/verification_report.schema.json: type/required/properties/enum/
// bounds/additionalProperties/items. Returns false with a reason on the
// first violation.
bool json_matches_schema(const std::string& json_text,
                         const std::string& schema_text, std::string* why);

// ---------------------------------------------------------------------------
// Corpus.

// Deterministic synthetic covers: layered value noise, a directional
// gradient, and a few soft shapes. Identical (resolution, seed) pairs yield
// identical pixels.
Image synthesize_cover(int resolution, std::uint64_t seed);

// Writes `count` synthetic covers as PNG files (synth_0000.png, ...).
void make_corpus(const std::string& directory, int count, int resolution,
                 std::uint64_t seed);

// Loads every decodable raster in lexicographic filename order,
// center-crops to square, and resizes to resolution x resolution RGB.
// Undecodable files are skipped with a warning; an empty result throws.
std::vector<Image> ingest_corpus(const std::string& directory, int resolution);

// ---------------------------------------------------------------------------
// Toolkit: loaded checkpoint + registry + provider behind one handle.

class Toolkit {
 public:
  explicit Toolkit(ToolkitConfig config);

  const ToolkitConfig& config() const { return config_; }
  const inn::InnWeights& weights() const;  // lazy; throws if missing

  // In-memory embedding: caption -> digest -> sign -> pattern -> embed.
  // The returned image is 8-bit quantized, matching the file that
  // embed_image writes. `report` (optional) receives digest/signature and
  // quality metrics; `pattern_out` (optional) receives the rendered truth
  // pattern for recovery-accuracy bookkeeping.
  Image embed(const Image& cover, const std::string& key_id,
              EmbedReport* report = nullptr,
              pattern::VisualPattern* pattern_out = nullptr) const;

  // File flow: rejects lossy output paths, writes a lossless raster plus a
  // JSON report next to it (<out>.embed.json).
  EmbedReport embed_image(const std::string& image_path,
                          const std::string& key_id,
                          const std::string& out_path) const;

  // Never throws on unverifiable content; only a missing key or checkpoint
  // aborts.
  VerificationReport verify(const Image& image,
                            const std::string& key_id) const;
  VerificationReport verify_image(const std::string& image_path,
                                  const std::string& key_id) const;

  // Acceptance policy over a report: signature validity, plus the semantic
  // gate when config.semantic_threshold >= 0 and a similarity was computed.
  bool accepted(const VerificationReport& report) const;

 private:
  ToolkitConfig config_;
  mutable inn::InnWeights weights_;
  mutable bool weights_loaded_ = false;
  mutable std::unique_ptr<semantics::CaptionProvider> provider_;

  semantics::CaptionProvider& provider() const;
};

// ---------------------------------------------------------------------------
// Key lifecycle: fresh pair on disk plus a registry entry.

crypto::KeyPair keygen(const ToolkitConfig& config, const std::string& key_id,
                       const std::string& owner);

// ---------------------------------------------------------------------------
// Training orchestration: ingest a corpus directory at the training
// resolution and run the optimizer per config.train, writing the checkpoint
// to config.paths.checkpoint.

trainer::TrainResult train_toolkit(const ToolkitConfig& config,
                                   const std::string& corpus_dir,
                                   const std::string& metrics_path);

// ---------------------------------------------------------------------------
// Benchmarks.

struct BenchRow {
  int resolution = 0;
  int payload_modules = 0;  // pattern side squared
  double psnr = 0.0;
  double ssim = 0.0;
  double rec_acc = 0.0;
  double ver_acc = 0.0;
  double embed_ms = 0.0;
  double verify_ms = 0.0;
};

struct RobustnessPoint {
  std::string transform;
  double parameter = 0.0;
  double ver_acc = 0.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::vector<RobustnessPoint> curve;
};

// Resolution sweep + robustness curves. Writes bench.json and
// robustness_curve.csv into out_dir and returns the aligned text table via
// `table_text` when non-null.
BenchResult bench(const Toolkit& toolkit, const std::string& corpus_dir,
                  const std::string& key_id, const std::string& out_dir,
                  std::string* table_text = nullptr);

std::string bench_table_text(const BenchResult& result);

}  // namespace metaseal::pipeline
