#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "metaseal/common.hpp"
#include "metaseal/inn.hpp"
#include "metaseal/tensor.hpp"

namespace metaseal::attacks {

// ---------------------------------------------------------------------------
// Red-team harness. Every attack produces a forged image; success is defined
// as the forged image passing signature verification, so the suite measures
// the unforgeability claim empirically.

enum class Kind {
  kReplay,
  kResidualMixup,
  kBlendMixup,
  kPgd,
  kWeightedMixup,
  kSubstituteInn,
};

const char* kind_name(Kind kind);
Kind kind_from_name(const std::string& name);

struct AttackSpec {
  Kind kind = Kind::kResidualMixup;
  int n = 4;                    // residual_mixup: averaged pairs
  double lambda_blend = 0.3;    // blend_mixup weight on the noise image
  double mix_weight = 0.05;     // weighted_mixup overlay weight
  double epsilon = 8.0 / 255;   // pgd: l-inf budget
  int steps = 50;               // pgd iterations
  double step_size = 2.0 / 255; // pgd per-step magnitude
  int trials = 20;

  void validate() const;  // throws on out-of-range parameters
};

struct AttackReport {
  std::string kind;
  int trials = 0;
  int verified_count = 0;
  double forgery_success_rate = 0.0;
  std::vector<std::string> artifact_paths;
};

// ---------------------------------------------------------------------------
// Attack primitives (pure image operations).

// Mean residual over (watermarked, original) pairs added onto the target:
// forged = clip(target + (1/n) * sum(I_w - I)).
Image residual_mixup(const std::vector<std::pair<Image, Image>>& pairs,
                     const Image& target);

// Linear blend of a watermarked noise image with a clean image:
// lambda * noise_watermarked + (1 - lambda) * clean. Result is clipped.
Image blend_mixup(const Image& noise_watermarked, const Image& clean,
                  double lambda_blend);

// Low-weight overlay of an extracted secret onto a target:
// forged = clip((1 - weight) * target + weight * secret). The secret image
// is resized to the target if shapes differ.
Image weighted_mixup(const Image& extracted_secret, const Image& target,
                     double weight = 0.05);

// ---------------------------------------------------------------------------
// Strawman watermark detector: a small convolutional binary classifier
// (watermarked vs clean) used as the PGD surrogate. Hand-rolled forward and
// backward passes; input size must be a multiple of 4 (two stride-2 stages).

struct StrawmanDetector {
  static constexpr int kHidden1 = 8;
  static constexpr int kHidden2 = 16;
  std::vector<float> conv1_w, conv1_b;  // [8][3][3][3], [8]
  std::vector<float> conv2_w, conv2_b;  // [16][8][3][3], [16]
  std::vector<float> fc_w;              // [16]
  float fc_b = 0.0f;
  bool gradients_enabled = true;  // pgd_forge requires a differentiable scorer
};

StrawmanDetector detector_init(std::uint64_t seed);

// Logit; positive means "watermarked".
double detector_score(const StrawmanDetector& detector, const Image& image);

// d(BCE(sigmoid(logit), label)) / d(input). Upstream loss is the binary
// cross-entropy against `label` (1 = watermarked).
Image detector_input_gradient(const StrawmanDetector& detector,
                              const Image& image, double label);

// Adam on BCE over random crops of the two classes. Returns the accuracy on
// a deterministic holdout split (fraction in [0, 1]).
double train_detector(StrawmanDetector& detector,
                      const std::vector<Image>& watermarked,
                      const std::vector<Image>& clean, int steps,
                      int crop_size, double learning_rate, std::uint64_t seed);

void save_detector(const std::string& path, const StrawmanDetector& detector);
StrawmanDetector load_detector(const std::string& path);

// Projected gradient descent toward `target_label` (1 = watermarked) under
// an l-inf budget. Every iterate satisfies |delta|_inf <= epsilon and stays
// inside [0, 1]. steps = 0 returns the input unchanged.
Image pgd_forge(const StrawmanDetector& detector, const Image& image,
                double epsilon, int steps, double step_size,
                double target_label = 1.0);

// ---------------------------------------------------------------------------
// Gray-box replay: extract the secret from a watermarked image with the
// adversary's substitute weights and re-embed it into the target with the
// same substitute.
Image replay_forge(const Image& source_watermarked, const Image& target,
                   const inn::InnWeights& substitute,
                   inn::ZPolicy policy = inn::ZPolicy::kZeros,
                   std::uint64_t z_seed = 0);

// ---------------------------------------------------------------------------
// Suite.

// Callbacks into the legitimate pipeline plus adversary-side assets. The
// suite never sees key material; `verify` reports only signature validity.
struct AttackEnv {
  std::function<Image(const Image&)> embed_legit;  // oracle embedding
  std::function<bool(const Image&)> verify;        // signature_valid
  const inn::InnWeights* substitute = nullptr;     // adversary theta'
  const StrawmanDetector* detector = nullptr;      // pgd surrogate
  int qr_version = 9;
  inn::ZPolicy z_policy = inn::ZPolicy::kZeros;
  std::uint64_t z_seed = 0;
  std::uint64_t seed = 0;   // trial randomness
  std::string out_dir;      // when set, first forged image per kind is saved
};

// Runs each spec over >= spec.trials images drawn from the corpus and
// aggregates per-kind forgery success. Throws on an empty corpus or a spec
// whose prerequisites (substitute weights, detector) are missing.
std::vector<AttackReport> run_attack_suite(const std::vector<AttackSpec>& specs,
                                           const std::vector<Image>& corpus,
                                           const AttackEnv& env);

std::string report_to_json(const std::vector<AttackReport>& reports);

}  // namespace metaseal::attacks
