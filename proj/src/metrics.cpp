#include "metaseal/metrics.hpp"

#include <bit>
#include <cmath>
#include <cstdint>

namespace metaseal::metrics {

namespace {

void check_same_shape(const Image& a, const Image& b, const char* fn) {
  if (a.h != b.h || a.w != b.w || a.c != b.c)
    throw Error("metrics", std::string(fn) + " requires same-shape images");
  if (a.h <= 0 || a.w <= 0 || a.c <= 0)
    throw Error("metrics", std::string(fn) + " requires non-empty images");
}

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::vector<double> gaussian_window() {
  std::vector<double> w(kSsimWindow);
  const double center = (kSsimWindow - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - center;
    w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable weighted filter, valid region only: (h,w) -> (h-10, w-10).
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                 const std::vector<double>& win) {
  const int oh = h - kSsimWindow + 1;
  const int ow = w - kSsimWindow + 1;
  std::vector<double> rows(static_cast<size_t>(oh) * w, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = 0; t < kSsimWindow; ++t)
        acc += win[t] * img[static_cast<size_t>(y + t) * w + x];
      rows[static_cast<size_t>(y) * w + x] = acc;
    }
  std::vector<double> out(static_cast<size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < kSsimWindow; ++t)
        acc += win[t] * rows[static_cast<size_t>(y) * w + x + t];
      out[static_cast<size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_same_shape(a, b, "psnr");
  double se = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  check_same_shape(a, b, "ssim");
  if (a.h < kSsimWindow || a.w < kSsimWindow)
    throw Error("metrics", "ssim requires images of at least 11x11");
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  const auto win = gaussian_window();
  const size_t plane = static_cast<size_t>(a.h) * a.w;

  double channel_sum = 0.0;
  std::vector<double> xa(plane), xb(plane), xaa(plane), xbb(plane), xab(plane);
  for (int ch = 0; ch < a.c; ++ch) {
    for (size_t i = 0; i < plane; ++i) {
      const double va = a.data[static_cast<size_t>(ch) * plane + i];
      const double vb = b.data[static_cast<size_t>(ch) * plane + i];
      xa[i] = va;
      xb[i] = vb;
      xaa[i] = va * va;
      xbb[i] = vb * vb;
      xab[i] = va * vb;
    }
    const auto mu_a = filter_valid(xa, a.h, a.w, win);
    const auto mu_b = filter_valid(xb, a.h, a.w, win);
    const auto m_aa = filter_valid(xaa, a.h, a.w, win);
    const auto m_bb = filter_valid(xbb, a.h, a.w, win);
    const auto m_ab = filter_valid(xab, a.h, a.w, win);
    double acc = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
      const double va = m_aa[i] - mu_a[i] * mu_a[i];
      const double vb = m_bb[i] - mu_b[i] * mu_b[i];
      const double cov = m_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
      acc += num / den;
    }
    channel_sum += acc / static_cast<double>(mu_a.size());
  }
  return channel_sum / a.c;
}

double ber(const Bytes& a, const Bytes& b) {
  if (a.size() != b.size())
    throw Error("metrics", "ber requires equal-length payloads");
  if (a.empty()) throw Error("metrics", "ber requires non-empty payloads");
  size_t flipped = 0;
  for (size_t i = 0; i < a.size(); ++i)
    flipped += std::popcount(static_cast<unsigned>(a[i] ^ b[i]));
  return static_cast<double>(flipped) / (8.0 * static_cast<double>(a.size()));
}

double rec_acc_bit(const Bytes& a, const Bytes& b) { return 1.0 - ber(a, b); }

double rec_acc_pattern(const qr::Matrix& a, const qr::Matrix& b) {
  if (a.size != b.size)
    throw Error("metrics", "rec_acc_pattern requires same-size patterns");
  if (a.size <= 0) throw Error("metrics", "rec_acc_pattern requires non-empty patterns");
  size_t equal = 0;
  for (size_t i = 0; i < a.modules.size(); ++i)
    equal += (a.modules[i] == b.modules[i]) ? 1 : 0;
  return static_cast<double>(equal) / static_cast<double>(a.modules.size());
}

double ver_acc(const std::vector<bool>& signature_valid) {
  if (signature_valid.empty())
    throw Error("metrics", "ver_acc over an empty report set is undefined");
  size_t ok = 0;
  for (bool v : signature_valid) ok += v ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(signature_valid.size());
}

double p_bit_success(double p_e, int num_bits) {
  if (p_e < 0.0 || p_e > 1.0)
    throw Error("metrics", "bit error rate must lie in [0, 1]");
  if (num_bits < 0) throw Error("metrics", "bit count must be non-negative");
  return std::pow(1.0 - p_e, num_bits);
}

double p_pattern_success(int n, int k, double p_s) {
  if (n <= 0 || k <= 0 || k > n || n > 255)
    throw Error("metrics", "invalid Reed-Solomon parameters");
  if (p_s < 0.0 || p_s > 1.0)
    throw Error("metrics", "symbol error rate must lie in [0, 1]");
  const int t = (n - k) / 2;
  if (p_s == 0.0) return 1.0;
  if (p_s == 1.0) return t >= n ? 1.0 : 0.0;
  // Running binomial term: C(n, i) p^i (1-p)^(n-i).
  double term = std::pow(1.0 - p_s, n);
  double total = term;
  for (int i = 1; i <= t; ++i) {
    term *= static_cast<double>(n - i + 1) / static_cast<double>(i);
    term *= p_s / (1.0 - p_s);
    total += term;
  }
  return std::min(1.0, total);
}

}  // namespace metaseal::metrics
