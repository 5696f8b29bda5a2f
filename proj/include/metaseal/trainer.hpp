#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metaseal/inn.hpp"
#include "metaseal/tensor.hpp"

namespace metaseal::trainer {

// Distortion pool sampled once per optimization step. Probabilities must sum
// to 1; ranges are sampled uniformly.
struct NoisePool {
  double p_identity = 0.4;
  double p_gaussian = 0.3;
  double p_jpeg = 0.3;
  double sigma_min = 0.01;
  double sigma_max = 0.05;
  int quality_min = 70;
  int quality_max = 95;
};

struct TrainConfig {
  int steps = 3000;
  int batch_size = 1;
  int patch_size = 64;  // multiple of 16 (chroma-subsampled 8x8 blocks)
  double learning_rate = 1e-4;
  double lambda_emb = 5.0;
  double lambda_rec = 1.0;
  uint64_t seed = 1;
  int block_count = inn::kDefaultBlockCount;
  float clamp_constant = inn::kDefaultClamp;
  int qr_version = 9;
  int render_size = 256;  // patterns are rendered here, then patch-cropped
  int checkpoint_every = 200;
  int log_every = 1;
  NoisePool pool;
};

// Stable hex digest of every training-relevant field; stored in checkpoints.
std::string config_hash(const TrainConfig& config);

struct StepMetrics {
  int step = 0;
  double loss_total = 0.0;
  double loss_emb = 0.0;
  double loss_rec = 0.0;
  double psnr = 0.0;
  double bit_acc = 0.0;
};

struct TrainResult {
  inn::InnWeights weights;
  int steps_completed = 0;
  StepMetrics last;
};

// Embedding + recovery loss: lambda_emb * mean((wm - cover)^2) +
// lambda_rec * mean((recovered - secret)^2), all in image space.
double combined_loss(double emb_mse, double rec_mse, double lambda_emb,
                     double lambda_rec);

// Runs the optimization loop over an in-memory corpus. Writes the final
// checkpoint to checkpoint_path (atomically) plus periodic snapshots, and
// one JSON object per logged step to metrics_path (newline-delimited). A
// non-finite loss aborts with the last good snapshot on disk. steps == 0
// saves the freshly initialized weights untouched.
TrainResult train(const TrainConfig& config, const std::vector<Image>& corpus,
                  const std::string& checkpoint_path,
                  const std::string& metrics_path);

struct CheckpointInfo {
  int format_version = 0;
  float clamp_constant = 0.0f;
  int block_count = 0;
  int channels = 0;
  std::string training_config_hash;
};

inline constexpr int kCheckpointFormatVersion = 1;

// Binary checkpoint: little-endian uint32 header length, JSON header (format
// version, architecture, named tensor directory), raw float32 data. Writes
// go through a temp file + rename.
void save_checkpoint(const std::string& path, const inn::InnWeights& weights,
                     const std::string& training_config_hash);
inn::InnWeights load_checkpoint(const std::string& path,
                                CheckpointInfo* info = nullptr);

// Parses a metrics file written by train().
std::vector<StepMetrics> parse_metrics_log(const std::string& path);

// Differentiable JPEG surrogate: BT.601 color transform, 2x2 chroma
// subsampling, 8x8 block DCT, quality-scaled quantization with real rounding.
// h and w must be multiples of 16. Gradients use a straight-through estimate
// in which rounding and the orthonormal DCT pair cancel, leaving the color
// transform adjoints around a 2x2 chroma block-average.
Tensor diff_jpeg_forward(const Tensor& x, int quality);
Tensor diff_jpeg_backward(const Tensor& grad_out);

}  // namespace metaseal::trainer
