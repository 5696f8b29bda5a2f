#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metaseal/tensor.hpp"

namespace metaseal::transforms {

enum class Kind {
  kIdentity,
  kFlipH,
  kBrightness,
  kContrast,
  kGaussianBlur,
  kGaussianNoise,
  kJpeg,
  kScale,
  kCrop,
};

const char* kind_name(Kind kind);
Kind kind_from_name(const std::string& name);

struct TransformSpec {
  Kind kind = Kind::kIdentity;
  double factor = 1.0;      // brightness/contrast multiplier, scale ratio
  int kernel = 3;           // blur kernel size, odd
  double sigma = 0.5;       // blur standard deviation
  double intensity = 0.05;  // additive noise standard deviation
  int quality = 90;         // real-codec JPEG quality
  double crop_ratio = 0.1;  // fraction of area removed (zeroed)
};

// Applies one transform. Deterministic for a given (image, spec, seed).
// Every kind except kScale preserves dimensions; kScale resizes by factor.
Image apply(const Image& image, const TransformSpec& spec, uint64_t seed = 0);

// Applies the kind across an ordered grid of its primary parameter
// (brightness/contrast/scale factor, blur sigma, noise intensity, jpeg
// quality, crop ratio). Outputs follow grid order.
std::vector<Image> sweep(const Image& image, Kind kind,
                         const std::vector<double>& grid, uint64_t seed = 0);

// The fixed evaluation suite used by robustness benchmarks.
std::vector<TransformSpec> default_eval_suite();

// Bilinear resize with half-pixel sample centers.
Image resize_bilinear(const Image& image, int out_h, int out_w);

}  // namespace metaseal::transforms
