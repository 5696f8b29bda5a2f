// Metric tests. Closed-form reference values were computed independently at
// high precision and frozen here; the analytic success probabilities are also
// cross-checked against Monte-Carlo simulation and coding-theory properties.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include <metaseal/common.hpp>
#include <metaseal/metrics.hpp>
#include <metaseal/qr.hpp>

using metaseal::Bytes;
using metaseal::Image;
using metaseal::Rng;
namespace metrics = metaseal::metrics;

namespace {

Image constant_image(int h, int w, int c, float value) {
  Image img(h, w, c);
  std::fill(img.data.begin(), img.data.end(), value);
  return img;
}

Image random_image(Rng& rng, int h, int w, int c) {
  Image img(h, w, c);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("psnr: identical images cap at 99 dB") {
  Rng rng(1);
  Image a = random_image(rng, 32, 32, 3);
  CHECK(metrics::psnr(a, a) == doctest::Approx(99.0));
}

TEST_CASE("psnr: a uniform one-LSB offset gives 20*log10(255)") {
  Image a = constant_image(16, 16, 3, 0.5f);
  Image b = constant_image(16, 16, 3, 0.5f + 1.0f / 255.0f);
  // MSE = (1/255)^2 exactly, so PSNR = 20 log10(255) = 48.1308... dB.
  CHECK(metrics::psnr(a, b) == doctest::Approx(48.1308036086791).epsilon(1e-6));
}

TEST_CASE("psnr: symmetry and monotonic degradation") {
  Rng rng(2);
  Image a = random_image(rng, 24, 24, 3);
  Image small_noise = a;
  Image big_noise = a;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    small_noise.data[i] += static_cast<float>(0.01 * rng.gaussian());
    big_noise.data[i] += static_cast<float>(0.10 * rng.gaussian());
  }
  CHECK(metrics::psnr(a, small_noise) == doctest::Approx(metrics::psnr(small_noise, a)));
  CHECK(metrics::psnr(a, small_noise) > metrics::psnr(a, big_noise));

  Image wrong_size = constant_image(16, 24, 3, 0.0f);
  CHECK_THROWS_AS(metrics::psnr(a, wrong_size), metaseal::Error);
}

TEST_CASE("ssim: identical images score exactly one") {
  Rng rng(3);
  Image a = random_image(rng, 40, 40, 3);
  CHECK(metrics::ssim(a, a) == doctest::Approx(1.0));
}

TEST_CASE("ssim: symmetric, below one under noise, ordered by severity") {
  Rng rng(4);
  Image a = random_image(rng, 40, 40, 1);
  Image mild = a;
  Image harsh = a;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    mild.data[i] = std::clamp(mild.data[i] + static_cast<float>(0.02 * rng.gaussian()), 0.0f, 1.0f);
    harsh.data[i] = std::clamp(harsh.data[i] + static_cast<float>(0.25 * rng.gaussian()), 0.0f, 1.0f);
  }
  double s_mild = metrics::ssim(a, mild);
  double s_harsh = metrics::ssim(a, harsh);
  CHECK(s_mild == doctest::Approx(metrics::ssim(mild, a)));
  CHECK(s_mild < 1.0);
  CHECK(s_harsh < s_mild);
  CHECK(s_harsh > -1.0);

  // A constant shift barely changes structure: SSIM stays high while PSNR
  // drops, confirming the two metrics measure different things.
  Image shifted = a;
  for (auto& v : shifted.data) v = std::clamp(v + 0.05f, 0.0f, 1.0f);
  CHECK(metrics::ssim(a, shifted) > 0.9);
}

TEST_CASE("ssim requires windows to fit") {
  Image tiny_a = constant_image(8, 8, 1, 0.3f);
  Image tiny_b = constant_image(8, 8, 1, 0.6f);
  CHECK_THROWS_AS(metrics::ssim(tiny_a, tiny_b), metaseal::Error);
}

TEST_CASE("bit error rate on hand-checked byte pairs") {
  CHECK(metrics::ber(Bytes{0x00}, Bytes{0xff}) == doctest::Approx(1.0));
  CHECK(metrics::ber(Bytes{0x00}, Bytes{0x0f}) == doctest::Approx(0.5));
  CHECK(metrics::ber(Bytes{0xaa}, Bytes{0xaa}) == doctest::Approx(0.0));
  CHECK(metrics::ber(Bytes{0xaa, 0x00}, Bytes{0x55, 0x00}) == doctest::Approx(0.5));
  CHECK(metrics::rec_acc_bit(Bytes{0x00}, Bytes{0x0f}) == doctest::Approx(0.5));
  CHECK(metrics::rec_acc_bit(Bytes{0x12, 0x34}, Bytes{0x12, 0x34}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(metrics::ber(Bytes{0x00}, Bytes{0x00, 0x01}), metaseal::Error);
  CHECK_THROWS_AS(metrics::ber(Bytes{}, Bytes{}), metaseal::Error);
}

TEST_CASE("pattern recovery accuracy counts equal modules") {
  metaseal::qr::Matrix a(53);
  Rng rng(5);
  for (auto& m : a.modules) m = rng.uniform() < 0.5 ? 1 : 0;
  metaseal::qr::Matrix b = a;
  CHECK(metrics::rec_acc_pattern(a, b) == doctest::Approx(1.0));

  b.set(10, 10, !b.get(10, 10));
  CHECK(metrics::rec_acc_pattern(a, b) == doctest::Approx(1.0 - 1.0 / 2809.0));

  metaseal::qr::Matrix c(85);
  CHECK_THROWS_AS(metrics::rec_acc_pattern(a, c), metaseal::Error);
}

TEST_CASE("verification accuracy is the mean outcome") {
  CHECK(metrics::ver_acc({true, true, true, false}) == doctest::Approx(0.75));
  CHECK(metrics::ver_acc({false}) == doctest::Approx(0.0));
  CHECK(metrics::ver_acc({true}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(metrics::ver_acc({}), metaseal::Error);
}

TEST_CASE("bit-level success probability is the exact power, not e^-pN") {
  // (1 - 0.01)^512 computed independently at high precision.
  CHECK(metrics::p_bit_success(0.01, 512) ==
        doctest::Approx(0.005823976768663698).epsilon(1e-12));
  // The exponential approximation e^-5.12 = 0.0059760... must NOT be what
  // the function returns; the gap is what distinguishes the two formulas.
  CHECK(std::abs(metrics::p_bit_success(0.01, 512) - 0.005976022895005943) > 1e-4);

  CHECK(metrics::p_bit_success(0.1, 10) == doctest::Approx(0.3486784401).epsilon(1e-12));
  CHECK(metrics::p_bit_success(0.0, 1000) == doctest::Approx(1.0));
  CHECK(metrics::p_bit_success(1.0, 1) == doctest::Approx(0.0));

  // Strictly decreasing in both arguments.
  double prev = 1.0;
  for (int n : {1, 8, 64, 256, 512, 1024}) {
    double p = metrics::p_bit_success(0.01, n);
    CHECK(p < prev);
    prev = p;
  }
  prev = 1.0;
  for (double pe : {0.001, 0.01, 0.05, 0.1, 0.3}) {
    double p = metrics::p_bit_success(pe, 128);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("pattern-level success probability: frozen closed-form values") {
  // Binomial tail for (15,9), t = 3, computed independently.
  CHECK(metrics::p_pattern_success(15, 9, 0.02) ==
        doctest::Approx(0.9998169943111932).epsilon(1e-12));
  CHECK(metrics::p_pattern_success(15, 9, 0.05) ==
        doctest::Approx(0.9945327413430827).epsilon(1e-12));
  CHECK(metrics::p_pattern_success(15, 9, 0.10) ==
        doctest::Approx(0.9444443699924645).epsilon(1e-12));

  CHECK(metrics::p_pattern_success(15, 9, 0.0) == doctest::Approx(1.0));
  CHECK(metrics::p_pattern_success(15, 9, 1.0) == doctest::Approx(0.0));
  // No parity means zero correction capacity: success iff no symbol errs.
  CHECK(metrics::p_pattern_success(9, 9, 0.1) ==
        doctest::Approx(0.387420489).epsilon(1e-12));
}

TEST_CASE("pattern-level probability agrees with Monte-Carlo simulation") {
  Rng rng(99);
  const int n = 15, k = 9, t = (n - k) / 2;
  for (double p_s : {0.02, 0.05, 0.10}) {
    const int trials = 100000;
    int ok = 0;
    for (int trial = 0; trial < trials; ++trial) {
      int errors = 0;
      for (int s = 0; s < n; ++s)
        if (rng.uniform() < p_s) ++errors;
      if (errors <= t) ++ok;
    }
    double mc = static_cast<double>(ok) / trials;
    double analytic = metrics::p_pattern_success(n, k, p_s);
    double sigma = std::sqrt(analytic * (1.0 - analytic) / trials);
    CHECK(std::abs(mc - analytic) < 3.0 * sigma + 1e-12);
  }
}

TEST_CASE("coding gain: protected patterns beat raw bits on a grid") {
  // A protected (n, k) pattern at symbol error rate p_s always survives at
  // least as often as 8n raw bits at the bit error rate implied by p_s.
  for (int n : {15, 30, 60}) {
    int k = (n * 3) / 5;
    for (double p_s : {0.005, 0.01, 0.02, 0.05, 0.1, 0.2}) {
      double protected_ok = metrics::p_pattern_success(n, k, p_s);
      // A symbol survives iff its 8 bits survive: p_bit = 1-(1-p_s)^(1/8).
      double p_bit = 1.0 - std::pow(1.0 - p_s, 1.0 / 8.0);
      double raw_ok = metrics::p_bit_success(p_bit, 8 * n);
      CHECK(protected_ok >= raw_ok);
    }
  }
}

TEST_CASE("probability inputs are validated") {
  CHECK_THROWS_AS(metrics::p_bit_success(-0.1, 10), metaseal::Error);
  CHECK_THROWS_AS(metrics::p_bit_success(1.1, 10), metaseal::Error);
  CHECK_THROWS_AS(metrics::p_bit_success(0.5, -1), metaseal::Error);
  CHECK(metrics::p_bit_success(0.5, 0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(metrics::p_pattern_success(9, 15, 0.1), metaseal::Error);
  CHECK_THROWS_AS(metrics::p_pattern_success(300, 9, 0.1), metaseal::Error);
  CHECK_THROWS_AS(metrics::p_pattern_success(15, 0, 0.1), metaseal::Error);
  CHECK_THROWS_AS(metrics::p_pattern_success(15, 9, -0.1), metaseal::Error);
  CHECK_THROWS_AS(metrics::p_pattern_success(15, 9, 1.5), metaseal::Error);
}
