#include "metaseal/transforms.hpp"

#include <algorithm>
#include <cmath>

#include "metaseal/common.hpp"
#include "metaseal/image_io.hpp"

namespace metaseal::transforms {

namespace {

void check_image(const Image& image) {
  if (image.h <= 0 || image.w <= 0 || image.c <= 0)
    throw Error("transforms", "empty image");
  if (image.data.size() !=
      static_cast<size_t>(image.h) * image.w * image.c)
    throw Error("transforms", "image buffer does not match its dimensions");
}

// Mirror index into [0, n) without repeating the edge sample.
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

Image flip_h(const Image& in) {
  Image out = in;
  for (int ch = 0; ch < in.c; ++ch)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x)
        out.at(ch, y, x) = in.at(ch, y, in.w - 1 - x);
  return out;
}

Image brightness(const Image& in, double factor) {
  Image out = in;
  for (float& v : out.data)
    v = clamp01(static_cast<float>(v * factor));
  return out;
}

Image contrast(const Image& in, double factor) {
  // Pivot around the mean gray luma so factor 1.0 is the identity.
  double mean = 0.0;
  const size_t plane = static_cast<size_t>(in.h) * in.w;
  if (in.c == 3) {
    for (size_t i = 0; i < plane; ++i)
      mean += 0.299 * in.data[i] + 0.587 * in.data[plane + i] +
              0.114 * in.data[2 * plane + i];
    mean /= static_cast<double>(plane);
  } else {
    for (float v : in.data) mean += v;
    mean /= static_cast<double>(in.data.size());
  }
  Image out = in;
  for (float& v : out.data)
    v = clamp01(static_cast<float>(mean + (v - mean) * factor));
  return out;
}

Image gaussian_blur(const Image& in, int kernel, double sigma) {
  if (kernel < 1 || kernel % 2 == 0)
    throw Error("transforms", "blur kernel size must be odd and positive");
  if (sigma <= 0.0) throw Error("transforms", "blur sigma must be positive");
  const int half = kernel / 2;
  std::vector<double> k(kernel);
  double sum = 0.0;
  for (int i = 0; i < kernel; ++i) {
    const double d = i - half;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;

  Image tmp = in, out = in;
  for (int ch = 0; ch < in.c; ++ch) {
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double acc = 0.0;
        for (int t = -half; t <= half; ++t)
          acc += k[t + half] * in.at(ch, y, reflect_index(x + t, in.w));
        tmp.at(ch, y, x) = static_cast<float>(acc);
      }
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double acc = 0.0;
        for (int t = -half; t <= half; ++t)
          acc += k[t + half] * tmp.at(ch, reflect_index(y + t, in.h), x);
        out.at(ch, y, x) = clamp01(static_cast<float>(acc));
      }
  }
  return out;
}

Image gaussian_noise(const Image& in, double intensity, uint64_t seed) {
  if (intensity < 0.0)
    throw Error("transforms", "noise intensity must be non-negative");
  Rng rng(seed);
  Image out = in;
  for (float& v : out.data)
    v = clamp01(static_cast<float>(v + intensity * rng.gaussian()));
  return out;
}

Image crop(const Image& in, double ratio, uint64_t seed) {
  if (ratio < 0.0 || ratio >= 1.0)
    throw Error("transforms", "crop ratio must lie in [0, 1)");
  if (ratio == 0.0) return in;
  // Keep a centered-area rectangle covering (1 - ratio) of the pixels; its
  // placement is seeded. Everything outside is zeroed, dimensions unchanged.
  const double side = std::sqrt(1.0 - ratio);
  const int keep_h = std::max(1, static_cast<int>(std::lround(in.h * side)));
  const int keep_w = std::max(1, static_cast<int>(std::lround(in.w * side)));
  Rng rng(seed);
  const int off_y = static_cast<int>(rng.uniform_index(
      static_cast<uint64_t>(in.h - keep_h + 1)));
  const int off_x = static_cast<int>(rng.uniform_index(
      static_cast<uint64_t>(in.w - keep_w + 1)));
  Image out = in;
  std::fill(out.data.begin(), out.data.end(), 0.0f);
  for (int ch = 0; ch < in.c; ++ch)
    for (int y = 0; y < keep_h; ++y)
      for (int x = 0; x < keep_w; ++x)
        out.at(ch, off_y + y, off_x + x) = in.at(ch, off_y + y, off_x + x);
  return out;
}

}  // namespace

const char* kind_name(Kind kind) {
  switch (kind) {
    case Kind::kIdentity: return "identity";
    case Kind::kFlipH: return "flip_h";
    case Kind::kBrightness: return "brightness";
    case Kind::kContrast: return "contrast";
    case Kind::kGaussianBlur: return "gaussian_blur";
    case Kind::kGaussianNoise: return "gaussian_noise";
    case Kind::kJpeg: return "jpeg";
    case Kind::kScale: return "scale";
    case Kind::kCrop: return "crop";
  }
  throw Error("transforms", "unknown transform kind");
}

Kind kind_from_name(const std::string& name) {
  for (Kind k : {Kind::kIdentity, Kind::kFlipH, Kind::kBrightness,
                 Kind::kContrast, Kind::kGaussianBlur, Kind::kGaussianNoise,
                 Kind::kJpeg, Kind::kScale, Kind::kCrop})
    if (name == kind_name(k)) return k;
  throw Error("transforms", "unknown transform kind: " + name);
}

Image resize_bilinear(const Image& image, int out_h, int out_w) {
  check_image(image);
  if (out_h <= 0 || out_w <= 0)
    throw Error("transforms", "resize target must be positive");
  Image out;
  out.h = out_h;
  out.w = out_w;
  out.c = image.c;
  out.data.assign(static_cast<size_t>(out_h) * out_w * image.c, 0.0f);
  const double sy = static_cast<double>(image.h) / out_h;
  const double sx = static_cast<double>(image.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(image.h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(image.w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < image.c; ++ch) {
        const double top = image.at(ch, y0, x0) * (1.0 - wx) +
                           image.at(ch, y0, x1) * wx;
        const double bot = image.at(ch, y1, x0) * (1.0 - wx) +
                           image.at(ch, y1, x1) * wx;
        out.at(ch, y, x) =
            clamp01(static_cast<float>(top * (1.0 - wy) + bot * wy));
      }
    }
  }
  return out;
}

Image apply(const Image& image, const TransformSpec& spec, uint64_t seed) {
  check_image(image);
  switch (spec.kind) {
    case Kind::kIdentity: return image;
    case Kind::kFlipH: return flip_h(image);
    case Kind::kBrightness: return brightness(image, spec.factor);
    case Kind::kContrast: return contrast(image, spec.factor);
    case Kind::kGaussianBlur:
      return gaussian_blur(image, spec.kernel, spec.sigma);
    case Kind::kGaussianNoise:
      return gaussian_noise(image, spec.intensity, seed);
    case Kind::kJpeg: {
      if (image.c != 3)
        throw Error("transforms", "jpeg transform expects a 3-channel image");
      return jpeg_roundtrip(image, spec.quality);
    }
    case Kind::kScale: {
      if (spec.factor <= 0.0)
        throw Error("transforms", "scale factor must be positive");
      const int oh = std::max(1, static_cast<int>(std::lround(image.h * spec.factor)));
      const int ow = std::max(1, static_cast<int>(std::lround(image.w * spec.factor)));
      return resize_bilinear(image, oh, ow);
    }
    case Kind::kCrop: return crop(image, spec.crop_ratio, seed);
  }
  throw Error("transforms", "unknown transform kind");
}

std::vector<Image> sweep(const Image& image, Kind kind,
                         const std::vector<double>& grid, uint64_t seed) {
  std::vector<Image> out;
  out.reserve(grid.size());
  for (double value : grid) {
    TransformSpec spec;
    spec.kind = kind;
    switch (kind) {
      case Kind::kBrightness:
      case Kind::kContrast:
      case Kind::kScale: spec.factor = value; break;
      case Kind::kGaussianBlur: spec.sigma = value; break;
      case Kind::kGaussianNoise: spec.intensity = value; break;
      case Kind::kJpeg: spec.quality = static_cast<int>(std::lround(value)); break;
      case Kind::kCrop: spec.crop_ratio = value; break;
      case Kind::kIdentity:
      case Kind::kFlipH: break;
    }
    out.push_back(apply(image, spec, seed));
  }
  return out;
}

std::vector<TransformSpec> default_eval_suite() {
  std::vector<TransformSpec> suite;
  auto add = [&](Kind kind) -> TransformSpec& {
    TransformSpec spec;
    spec.kind = kind;
    suite.push_back(spec);
    return suite.back();
  };
  add(Kind::kIdentity);
  add(Kind::kFlipH);
  add(Kind::kBrightness).factor = 1.2;
  add(Kind::kContrast).factor = 1.5;
  {
    auto& s = add(Kind::kGaussianBlur);
    s.kernel = 3;
    s.sigma = 0.5;
  }
  add(Kind::kGaussianNoise).intensity = 0.05;
  add(Kind::kJpeg).quality = 90;
  add(Kind::kScale).factor = 0.5;
  add(Kind::kCrop).crop_ratio = 0.1;
  return suite;
}

}  // namespace metaseal::transforms
