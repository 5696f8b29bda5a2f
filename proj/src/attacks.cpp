#include "metaseal/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "metaseal/image_io.hpp"
#include "metaseal/pattern.hpp"
#include "metaseal/transforms.hpp"

namespace metaseal::attacks {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (a.h != b.h || a.w != b.w || a.c != b.c)
    throw Error("attacks", std::string("shape mismatch in ") + what);
}

Image clip_copy(Image img) {
  for (float& v : img.data) v = clamp01(v);
  return img;
}

}  // namespace

const char* kind_name(Kind kind) {
  switch (kind) {
    case Kind::kReplay: return "replay";
    case Kind::kResidualMixup: return "residual_mixup";
    case Kind::kBlendMixup: return "blend_mixup";
    case Kind::kPgd: return "pgd";
    case Kind::kWeightedMixup: return "weighted_mixup";
    case Kind::kSubstituteInn: return "substitute_inn";
  }
  throw Error("attacks", "unreachable attack kind");
}

Kind kind_from_name(const std::string& name) {
  if (name == "replay") return Kind::kReplay;
  if (name == "residual_mixup") return Kind::kResidualMixup;
  if (name == "blend_mixup") return Kind::kBlendMixup;
  if (name == "pgd") return Kind::kPgd;
  if (name == "weighted_mixup") return Kind::kWeightedMixup;
  if (name == "substitute_inn") return Kind::kSubstituteInn;
  throw Error("attacks", "unknown attack kind '" + name + "'");
}

void AttackSpec::validate() const {
  if (n < 1) throw Error("attacks", "residual_mixup needs n >= 1");
  if (lambda_blend < 0.0 || lambda_blend > 1.0)
    throw Error("attacks", "lambda_blend must lie in [0, 1]");
  if (mix_weight < 0.0 || mix_weight > 1.0)
    throw Error("attacks", "mix_weight must lie in [0, 1]");
  if (mix_weight > 0.1 && kind == Kind::kWeightedMixup)
    throw Error("attacks", "weighted_mixup weight above 0.1 is perceptible");
  if (epsilon <= 0.0) throw Error("attacks", "pgd epsilon must be positive");
  if (step_size <= 0.0) throw Error("attacks", "pgd step size must be positive");
  if (steps < 0) throw Error("attacks", "pgd steps must be non-negative");
  if (trials < 1) throw Error("attacks", "at least one trial required");
}

// ---------------------------------------------------------------------------
// Primitives.

Image residual_mixup(const std::vector<std::pair<Image, Image>>& pairs,
                     const Image& target) {
  if (pairs.empty()) throw Error("attacks", "residual_mixup needs n >= 1 pairs");
  Image mean_residual(target.h, target.w, target.c);
  for (const auto& [watermarked, original] : pairs) {
    require_same_shape(watermarked, original, "residual pair");
    require_same_shape(watermarked, target, "residual vs target");
    for (std::size_t i = 0; i < mean_residual.data.size(); ++i)
      mean_residual.data[i] += watermarked.data[i] - original.data[i];
  }
  const float inv = 1.0f / static_cast<float>(pairs.size());
  Image forged = target;
  for (std::size_t i = 0; i < forged.data.size(); ++i)
    forged.data[i] = clamp01(forged.data[i] + mean_residual.data[i] * inv);
  return forged;
}

Image blend_mixup(const Image& noise_watermarked, const Image& clean,
                  double lambda_blend) {
  if (lambda_blend < 0.0 || lambda_blend > 1.0)
    throw Error("attacks", "lambda_blend must lie in [0, 1]");
  require_same_shape(noise_watermarked, clean, "blend_mixup");
  Image forged = clean;
  const float lam = static_cast<float>(lambda_blend);
  for (std::size_t i = 0; i < forged.data.size(); ++i)
    forged.data[i] = clamp01(lam * noise_watermarked.data[i] +
                             (1.0f - lam) * clean.data[i]);
  return forged;
}

Image weighted_mixup(const Image& extracted_secret, const Image& target,
                     double weight) {
  if (weight < 0.0 || weight > 1.0)
    throw Error("attacks", "mix weight must lie in [0, 1]");
  Image secret = extracted_secret;
  if (secret.h != target.h || secret.w != target.w)
    secret = transforms::resize_bilinear(secret, target.h, target.w);
  Image forged = target;
  const float wgt = static_cast<float>(weight);
  for (int ch = 0; ch < target.c; ++ch) {
    // Grayscale secrets modulate every channel.
    const int sc = secret.c == target.c ? ch : 0;
    for (int y = 0; y < target.h; ++y)
      for (int x = 0; x < target.w; ++x)
        forged.at(ch, y, x) = clamp01((1.0f - wgt) * target.at(ch, y, x) +
                                      wgt * secret.at(sc, y, x));
  }
  return forged;
}

// ---------------------------------------------------------------------------
// Strawman detector.

namespace {

constexpr float kLeak = 0.2f;

struct DetectorTrace {
  int h1 = 0, w1 = 0, h2 = 0, w2 = 0;
  std::vector<float> pre1, act1;  // conv1 pre/post activation
  std::vector<float> pre2, act2;  // conv2 pre/post activation
  std::vector<float> feat;        // global average pool
  double logit = 0.0;
};

// 3x3 convolution, stride 2, zero padding 1.
void conv_forward(const float* in, int in_c, int h, int w, const float* weight,
                  const float* bias, int out_c, float* out) {
  const int oh = h / 2, ow = w / 2;
  for (int oc = 0; oc < out_c; ++oc)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        float sum = bias[oc];
        for (int ic = 0; ic < in_c; ++ic)
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * oy + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * ox + kx - 1;
              if (ix < 0 || ix >= w) continue;
              sum += weight[((oc * in_c + ic) * 3 + ky) * 3 + kx] *
                     in[(ic * h + iy) * w + ix];
            }
          }
        out[(oc * oh + oy) * ow + ox] = sum;
      }
}

// Gradients of the stride-2 convolution. Any of d_weight/d_bias/d_in may be
// null when that gradient is not needed.
void conv_backward(const float* in, int in_c, int h, int w, const float* weight,
                   int out_c, const float* d_out, float* d_weight,
                   float* d_bias, float* d_in) {
  const int oh = h / 2, ow = w / 2;
  for (int oc = 0; oc < out_c; ++oc)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const float g = d_out[(oc * oh + oy) * ow + ox];
        if (g == 0.0f) continue;
        if (d_bias) d_bias[oc] += g;
        for (int ic = 0; ic < in_c; ++ic)
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * oy + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * ox + kx - 1;
              if (ix < 0 || ix >= w) continue;
              const int widx = ((oc * in_c + ic) * 3 + ky) * 3 + kx;
              if (d_weight) d_weight[widx] += g * in[(ic * h + iy) * w + ix];
              if (d_in) d_in[(ic * h + iy) * w + ix] += g * weight[widx];
            }
          }
      }
}

void leaky_forward(const std::vector<float>& pre, std::vector<float>& act) {
  act.resize(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i)
    act[i] = pre[i] > 0.0f ? pre[i] : kLeak * pre[i];
}

void leaky_backward(const std::vector<float>& pre, std::vector<float>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (pre[i] <= 0.0f) grad[i] *= kLeak;
}

DetectorTrace detector_forward(const StrawmanDetector& d, const Image& img) {
  if (img.c != 3) throw Error("attacks", "detector expects 3-channel input");
  if (img.h % 4 != 0 || img.w % 4 != 0 || img.h < 8 || img.w < 8)
    throw Error("attacks", "detector input dims must be multiples of 4, >= 8");
  DetectorTrace t;
  t.h1 = img.h / 2;
  t.w1 = img.w / 2;
  t.h2 = img.h / 4;
  t.w2 = img.w / 4;
  t.pre1.assign(static_cast<std::size_t>(StrawmanDetector::kHidden1) * t.h1 * t.w1, 0.0f);
  conv_forward(img.data.data(), 3, img.h, img.w, d.conv1_w.data(),
               d.conv1_b.data(), StrawmanDetector::kHidden1, t.pre1.data());
  leaky_forward(t.pre1, t.act1);
  t.pre2.assign(static_cast<std::size_t>(StrawmanDetector::kHidden2) * t.h2 * t.w2, 0.0f);
  conv_forward(t.act1.data(), StrawmanDetector::kHidden1, t.h1, t.w1,
               d.conv2_w.data(), d.conv2_b.data(), StrawmanDetector::kHidden2,
               t.pre2.data());
  leaky_forward(t.pre2, t.act2);
  t.feat.assign(StrawmanDetector::kHidden2, 0.0f);
  const float inv_area = 1.0f / static_cast<float>(t.h2 * t.w2);
  for (int c = 0; c < StrawmanDetector::kHidden2; ++c) {
    float sum = 0.0f;
    for (int i = 0; i < t.h2 * t.w2; ++i) sum += t.act2[c * t.h2 * t.w2 + i];
    t.feat[c] = sum * inv_area;
  }
  t.logit = d.fc_b;
  for (int c = 0; c < StrawmanDetector::kHidden2; ++c)
    t.logit += static_cast<double>(d.fc_w[c]) * t.feat[c];
  return t;
}

struct DetectorGrads {
  std::vector<float> conv1_w, conv1_b, conv2_w, conv2_b, fc_w;
  float fc_b = 0.0f;
};

// Backpropagates BCE-with-logits against `label`. Fills parameter gradients
// when `grads` is non-null and returns the input gradient when `want_input`.
Image detector_backward(const StrawmanDetector& d, const Image& img,
                        const DetectorTrace& t, double label,
                        DetectorGrads* grads, bool want_input) {
  const double prob = 1.0 / (1.0 + std::exp(-t.logit));
  const float dlogit = static_cast<float>(prob - label);

  std::vector<float> dfeat(StrawmanDetector::kHidden2);
  for (int c = 0; c < StrawmanDetector::kHidden2; ++c)
    dfeat[c] = dlogit * d.fc_w[c];
  if (grads) {
    grads->fc_b += dlogit;
    for (int c = 0; c < StrawmanDetector::kHidden2; ++c)
      grads->fc_w[c] += dlogit * t.feat[c];
  }

  std::vector<float> dact2(t.act2.size());
  const float inv_area = 1.0f / static_cast<float>(t.h2 * t.w2);
  for (int c = 0; c < StrawmanDetector::kHidden2; ++c)
    for (int i = 0; i < t.h2 * t.w2; ++i)
      dact2[c * t.h2 * t.w2 + i] = dfeat[c] * inv_area;
  leaky_backward(t.pre2, dact2);

  std::vector<float> dact1(t.act1.size(), 0.0f);
  conv_backward(t.act1.data(), StrawmanDetector::kHidden1, t.h1, t.w1,
                d.conv2_w.data(), StrawmanDetector::kHidden2, dact2.data(),
                grads ? grads->conv2_w.data() : nullptr,
                grads ? grads->conv2_b.data() : nullptr, dact1.data());
  leaky_backward(t.pre1, dact1);

  Image dinput(img.h, img.w, 3);
  conv_backward(img.data.data(), 3, img.h, img.w, d.conv1_w.data(),
                StrawmanDetector::kHidden1, dact1.data(),
                grads ? grads->conv1_w.data() : nullptr,
                grads ? grads->conv1_b.data() : nullptr,
                want_input ? dinput.data.data() : nullptr);
  return dinput;
}

}  // namespace

StrawmanDetector detector_init(std::uint64_t seed) {
  StrawmanDetector d;
  Rng rng(seed ^ 0xDE7EC70ULL);
  auto he_fill = [&](std::vector<float>& v, std::size_t count, int fan_in) {
    v.resize(count);
    const double scale = std::sqrt(2.0 / fan_in);
    for (float& x : v) x = static_cast<float>(rng.gaussian() * scale);
  };
  he_fill(d.conv1_w, static_cast<std::size_t>(StrawmanDetector::kHidden1) * 3 * 9, 3 * 9);
  d.conv1_b.assign(StrawmanDetector::kHidden1, 0.0f);
  he_fill(d.conv2_w,
          static_cast<std::size_t>(StrawmanDetector::kHidden2) *
              StrawmanDetector::kHidden1 * 9,
          StrawmanDetector::kHidden1 * 9);
  d.conv2_b.assign(StrawmanDetector::kHidden2, 0.0f);
  he_fill(d.fc_w, StrawmanDetector::kHidden2, StrawmanDetector::kHidden2);
  d.fc_b = 0.0f;
  return d;
}

double detector_score(const StrawmanDetector& detector, const Image& image) {
  return detector_forward(detector, image).logit;
}

Image detector_input_gradient(const StrawmanDetector& detector,
                              const Image& image, double label) {
  if (!detector.gradients_enabled)
    throw Error("attacks", "detector does not expose gradients");
  const DetectorTrace trace = detector_forward(detector, image);
  return detector_backward(detector, image, trace, label, nullptr, true);
}

double train_detector(StrawmanDetector& detector,
                      const std::vector<Image>& watermarked,
                      const std::vector<Image>& clean, int steps,
                      int crop_size, double learning_rate,
                      std::uint64_t seed) {
  if (watermarked.empty() || clean.empty())
    throw Error("attacks", "detector training needs both classes");
  if (crop_size % 4 != 0 || crop_size < 8)
    throw Error("attacks", "crop size must be a multiple of 4, >= 8");
  for (const auto* cls : {&watermarked, &clean})
    for (const Image& img : *cls)
      if (img.h < crop_size || img.w < crop_size || img.c != 3)
        throw Error("attacks", "training images must be 3-channel and at "
                               "least crop size");

  // Deterministic holdout: the last quarter of each class (at least one).
  const auto split = [](const std::vector<Image>& v) {
    return std::max<std::size_t>(1, v.size() - std::max<std::size_t>(1, v.size() / 4));
  };
  const std::size_t wm_train = split(watermarked);
  const std::size_t cl_train = split(clean);

  Rng rng(seed ^ 0x7E57ULL);
  DetectorGrads g;
  g.conv1_w.assign(detector.conv1_w.size(), 0.0f);
  g.conv1_b.assign(detector.conv1_b.size(), 0.0f);
  g.conv2_w.assign(detector.conv2_w.size(), 0.0f);
  g.conv2_b.assign(detector.conv2_b.size(), 0.0f);
  g.fc_w.assign(detector.fc_w.size(), 0.0f);

  // Adam state, one slot per parameter vector (+1 for fc bias).
  struct Slot { std::vector<double> m, v; };
  std::vector<float>* params[] = {&detector.conv1_w, &detector.conv1_b,
                                  &detector.conv2_w, &detector.conv2_b,
                                  &detector.fc_w};
  std::vector<float>* grads[] = {&g.conv1_w, &g.conv1_b, &g.conv2_w,
                                 &g.conv2_b, &g.fc_w};
  Slot slots[6];
  for (int i = 0; i < 5; ++i) {
    slots[i].m.assign(params[i]->size(), 0.0);
    slots[i].v.assign(params[i]->size(), 0.0);
  }
  slots[5].m.assign(1, 0.0);
  slots[5].v.assign(1, 0.0);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  auto crop_of = [&](const Image& img) {
    const int oy = static_cast<int>(rng.uniform_index(img.h - crop_size + 1));
    const int ox = static_cast<int>(rng.uniform_index(img.w - crop_size + 1));
    Image out(crop_size, crop_size, 3);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < crop_size; ++y)
        for (int x = 0; x < crop_size; ++x)
          out.at(c, y, x) = img.at(c, oy + y, ox + x);
    return out;
  };

  for (int step = 1; step <= steps; ++step) {
    const bool positive = rng.uniform() < 0.5;
    const Image sample =
        positive
            ? crop_of(watermarked[rng.uniform_index(wm_train)])
            : crop_of(clean[rng.uniform_index(cl_train)]);
    const double label = positive ? 1.0 : 0.0;

    for (auto* gv : grads) std::fill(gv->begin(), gv->end(), 0.0f);
    g.fc_b = 0.0f;
    const DetectorTrace trace = detector_forward(detector, sample);
    detector_backward(detector, sample, trace, label, &g, false);

    const double bc1 = 1.0 - std::pow(beta1, step);
    const double bc2 = 1.0 - std::pow(beta2, step);
    for (int i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < params[i]->size(); ++j) {
        const double grad = (*grads[i])[j];
        slots[i].m[j] = beta1 * slots[i].m[j] + (1.0 - beta1) * grad;
        slots[i].v[j] = beta2 * slots[i].v[j] + (1.0 - beta2) * grad * grad;
        (*params[i])[j] -= static_cast<float>(
            learning_rate * (slots[i].m[j] / bc1) /
            (std::sqrt(slots[i].v[j] / bc2) + eps));
      }
    }
    slots[5].m[0] = beta1 * slots[5].m[0] + (1.0 - beta1) * g.fc_b;
    slots[5].v[0] = beta2 * slots[5].v[0] + (1.0 - beta2) * g.fc_b * g.fc_b;
    detector.fc_b -= static_cast<float>(learning_rate * (slots[5].m[0] / bc1) /
                                        (std::sqrt(slots[5].v[0] / bc2) + eps));
  }

  // Holdout accuracy on deterministic center crops.
  int correct = 0, total = 0;
  auto center_crop = [&](const Image& img) {
    const int oy = (img.h - crop_size) / 2, ox = (img.w - crop_size) / 2;
    Image out(crop_size, crop_size, 3);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < crop_size; ++y)
        for (int x = 0; x < crop_size; ++x)
          out.at(c, y, x) = img.at(c, oy + y, ox + x);
    return out;
  };
  for (std::size_t i = wm_train; i < watermarked.size(); ++i, ++total)
    if (detector_score(detector, center_crop(watermarked[i])) > 0.0) ++correct;
  for (std::size_t i = cl_train; i < clean.size(); ++i, ++total)
    if (detector_score(detector, center_crop(clean[i])) <= 0.0) ++correct;
  return total > 0 ? static_cast<double>(correct) / total : 0.0;
}

void save_detector(const std::string& path, const StrawmanDetector& d) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("attacks", "cannot write detector file: " + path);
  const char magic[4] = {'M', 'S', 'D', 'T'};
  out.write(magic, 4);
  auto put = [&](const std::vector<float>& v) {
    const std::uint32_t count = static_cast<std::uint32_t>(v.size());
    out.write(reinterpret_cast<const char*>(&count), 4);
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
  };
  put(d.conv1_w);
  put(d.conv1_b);
  put(d.conv2_w);
  put(d.conv2_b);
  put(d.fc_w);
  out.write(reinterpret_cast<const char*>(&d.fc_b), sizeof(float));
  if (!out) throw Error("attacks", "short write to detector file: " + path);
}

StrawmanDetector load_detector(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("attacks", "cannot open detector file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MSDT", 4) != 0)
    throw Error("attacks", "not a detector file: " + path);
  StrawmanDetector d;
  auto get = [&](std::vector<float>& v, std::size_t expect) {
    std::uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    if (!in || count != expect)
      throw Error("attacks", "detector file layout mismatch: " + path);
    v.resize(count);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw Error("attacks", "detector file truncated: " + path);
  };
  get(d.conv1_w, static_cast<std::size_t>(StrawmanDetector::kHidden1) * 27);
  get(d.conv1_b, StrawmanDetector::kHidden1);
  get(d.conv2_w, static_cast<std::size_t>(StrawmanDetector::kHidden2) *
                     StrawmanDetector::kHidden1 * 9);
  get(d.conv2_b, StrawmanDetector::kHidden2);
  get(d.fc_w, StrawmanDetector::kHidden2);
  in.read(reinterpret_cast<char*>(&d.fc_b), sizeof(float));
  if (!in) throw Error("attacks", "detector file truncated: " + path);
  return d;
}

Image pgd_forge(const StrawmanDetector& detector, const Image& image,
                double epsilon, int steps, double step_size,
                double target_label) {
  if (!detector.gradients_enabled)
    throw Error("attacks", "pgd requires a detector exposing gradients");
  if (epsilon <= 0.0) throw Error("attacks", "pgd epsilon must be positive");
  if (step_size <= 0.0) throw Error("attacks", "pgd step size must be positive");
  if (steps < 0) throw Error("attacks", "pgd steps must be non-negative");

  const float eps = static_cast<float>(epsilon);
  const float step = static_cast<float>(step_size);
  Image delta(image.h, image.w, image.c);
  Image current = image;
  for (int it = 0; it < steps; ++it) {
    const Image grad = detector_input_gradient(detector, current, target_label);
    for (std::size_t i = 0; i < delta.data.size(); ++i) {
      const float g = grad.data[i];
      const float sign = g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f);
      float d = delta.data[i] - step * sign;  // descend the BCE toward label
      d = std::min(eps, std::max(-eps, d));
      // Keep the iterate a valid image; the projection shrinks delta, so the
      // l-inf bound continues to hold.
      d = std::min(1.0f - image.data[i], std::max(-image.data[i], d));
      delta.data[i] = d;
      current.data[i] = image.data[i] + d;
    }
  }
  return current;
}

Image replay_forge(const Image& source_watermarked, const Image& target,
                   const inn::InnWeights& substitute, inn::ZPolicy policy,
                   std::uint64_t z_seed) {
  const inn::ExtractResult extracted =
      inn::extract(source_watermarked, substitute, policy, z_seed);
  Image secret = clip_copy(extracted.recovered_secret);
  if (secret.h != target.h || secret.w != target.w)
    secret = transforms::resize_bilinear(secret, target.h, target.w);
  const inn::EmbedResult embedded = inn::embed(target, secret, substitute);
  return embedded.watermarked;
}

// ---------------------------------------------------------------------------
// Suite.

namespace {

Image uniform_noise_cover(int h, int w, Rng& rng) {
  Image img(h, w, 3);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

Bytes random_bytes(std::size_t count, Rng& rng) {
  Bytes out(count);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng.uniform_index(256));
  return out;
}

}  // namespace

std::vector<AttackReport> run_attack_suite(const std::vector<AttackSpec>& specs,
                                           const std::vector<Image>& corpus,
                                           const AttackEnv& env) {
  if (corpus.empty()) throw Error("attacks", "attack corpus is empty");
  if (!env.embed_legit) throw Error("attacks", "embed callback not provided");
  if (!env.verify) throw Error("attacks", "verify callback not provided");
  for (const AttackSpec& spec : specs) spec.validate();
  if (!env.out_dir.empty()) fs::create_directories(env.out_dir);

  // Shared pool of legitimately watermarked corpus images, reused across
  // trials and attack kinds to bound oracle calls.
  std::size_t pool_need = 1;
  for (const AttackSpec& spec : specs) {
    if (spec.kind == Kind::kResidualMixup)
      pool_need = std::max(pool_need, static_cast<std::size_t>(spec.n) + 1);
    if (spec.kind == Kind::kReplay || spec.kind == Kind::kWeightedMixup)
      pool_need = std::max<std::size_t>(pool_need, 8);
  }
  const std::size_t pool_size = std::min(corpus.size(), pool_need + 4);
  std::vector<Image> pool;
  for (std::size_t i = 0; i < pool_size; ++i)
    pool.push_back(env.embed_legit(corpus[i]));

  Rng rng(env.seed ^ 0xA77ACBULL);
  std::vector<AttackReport> reports;
  for (const AttackSpec& spec : specs) {
    const bool needs_substitute = spec.kind == Kind::kReplay ||
                                  spec.kind == Kind::kWeightedMixup ||
                                  spec.kind == Kind::kSubstituteInn;
    if (needs_substitute && !env.substitute)
      throw Error("attacks", std::string(kind_name(spec.kind)) +
                                 " needs substitute weights");
    if (spec.kind == Kind::kPgd && !env.detector)
      throw Error("attacks", "pgd needs a trained detector");

    AttackReport report;
    report.kind = kind_name(spec.kind);
    report.trials = spec.trials;
    for (int trial = 0; trial < spec.trials; ++trial) {
      const Image& target = corpus[trial % corpus.size()];
      Image forged;
      switch (spec.kind) {
        case Kind::kResidualMixup: {
          std::vector<std::pair<Image, Image>> pairs;
          for (int j = 0; j < spec.n; ++j) {
            const std::size_t idx = (trial + j) % pool.size();
            pairs.emplace_back(pool[idx], corpus[idx]);
          }
          forged = residual_mixup(pairs, corpus[(trial + spec.n) % corpus.size()]);
          break;
        }
        case Kind::kBlendMixup: {
          Rng noise_rng(env.seed * 1000003ULL + trial);
          const Image noise = uniform_noise_cover(target.h, target.w, noise_rng);
          const Image noise_wm = env.embed_legit(noise);
          forged = blend_mixup(noise_wm, target, spec.lambda_blend);
          break;
        }
        case Kind::kWeightedMixup: {
          const Image& source = pool[trial % pool.size()];
          const inn::ExtractResult extracted =
              inn::extract(source, *env.substitute, env.z_policy, env.z_seed);
          forged = weighted_mixup(clip_copy(extracted.recovered_secret),
                                  target, spec.mix_weight);
          break;
        }
        case Kind::kPgd: {
          forged = pgd_forge(*env.detector, target, spec.epsilon, spec.steps,
                             spec.step_size, 1.0);
          break;
        }
        case Kind::kReplay: {
          const Image& source = pool[trial % pool.size()];
          forged = replay_forge(source, corpus[(trial + 1) % corpus.size()],
                                *env.substitute, env.z_policy, env.z_seed);
          break;
        }
        case Kind::kSubstituteInn: {
          // The adversary can mint any payload but cannot sign it.
          char digest[32];
          std::snprintf(digest, sizeof(digest), "forged-scene-%04d", trial);
          const std::string digest_str(digest);
          const Bytes digest_bytes(digest_str.begin(), digest_str.end());
          const Bytes fake_signature = random_bytes(pattern::kSignatureLength, rng);
          const pattern::VisualPattern pat = pattern::encode_pattern(
              digest_bytes, fake_signature, env.qr_version);
          const Image secret = pattern::render_pattern(pat, target.h, target.w);
          forged = inn::embed(target, secret, *env.substitute).watermarked;
          break;
        }
      }
      if (env.verify(quantize_u8(forged))) ++report.verified_count;
      if (trial == 0 && !env.out_dir.empty()) {
        const std::string path =
            (fs::path(env.out_dir) /
             ("forged_" + report.kind + "_trial00.png")).string();
        save_png(path, clip_copy(forged));
        report.artifact_paths.push_back(path);
      }
    }
    report.forgery_success_rate =
        static_cast<double>(report.verified_count) / report.trials;
    reports.push_back(std::move(report));
  }
  return reports;
}

std::string report_to_json(const std::vector<AttackReport>& reports) {
  json arr = json::array();
  for (const AttackReport& report : reports)
    arr.push_back({{"kind", report.kind},
                   {"trials", report.trials},
                   {"verified_count", report.verified_count},
                   {"forgery_success_rate", report.forgery_success_rate},
                   {"artifact_paths", report.artifact_paths}});
  return json{{"attacks", arr}}.dump(2);
}

}  // namespace metaseal::attacks
