#include "metaseal/pattern.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace metaseal::pattern {

namespace {

struct Grid {
  int scale = 0;     // pixels per module
  int origin_y = 0;  // top-left of the quiet zone
  int origin_x = 0;
  int extent = 0;    // (m + 8) * scale
};

Grid grid_for(int version, int height, int width) {
  int m = qr::side_length(version);
  int total_modules = m + 8;  // 4-module quiet zone on each side
  int scale = std::min(height, width) / total_modules;
  if (scale < 4)
    throw Error("pattern",
                "target " + std::to_string(height) + "x" +
                    std::to_string(width) +
                    " leaves fewer than 4 pixels per module");
  Grid g;
  g.scale = scale;
  g.extent = total_modules * scale;
  g.origin_y = (height - g.extent) / 2;
  g.origin_x = (width - g.extent) / 2;
  return g;
}

double otsu_threshold(const std::vector<double>& values) {
  constexpr int kBins = 256;
  std::array<int, kBins> hist{};
  for (double v : values) {
    int bin = static_cast<int>(v * (kBins - 1) + 0.5);
    bin = std::clamp(bin, 0, kBins - 1);
    ++hist[bin];
  }
  double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int i = 0; i < kBins; ++i) sum_all += i * static_cast<double>(hist[i]);

  double best_var = -1.0, sum_b = 0.0, w_b = 0.0;
  int best_bin = kBins / 2;
  for (int i = 0; i < kBins; ++i) {
    w_b += hist[i];
    if (w_b == 0) continue;
    double w_f = total - w_b;
    if (w_f == 0) break;
    sum_b += i * static_cast<double>(hist[i]);
    double m_b = sum_b / w_b;
    double m_f = (sum_all - sum_b) / w_f;
    double between = w_b * w_f * (m_b - m_f) * (m_b - m_f);
    if (between > best_var) {
      best_var = between;
      best_bin = i;
    }
  }
  return (best_bin + 0.5) / (kBins - 1);
}

std::vector<double> pooled_modules(const Image& secret, int version,
                                   const Grid& g) {
  int m = qr::side_length(version);
  std::vector<double> pooled(static_cast<std::size_t>(m) * m, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      int y0 = g.origin_y + (4 + i) * g.scale;
      int x0 = g.origin_x + (4 + j) * g.scale;
      double acc = 0.0;
      for (int y = y0; y < y0 + g.scale; ++y)
        for (int x = x0; x < x0 + g.scale; ++x) {
          double px = 0.0;
          for (int c = 0; c < secret.c; ++c) px += secret.at(c, y, x);
          acc += px / secret.c;
        }
      pooled[static_cast<std::size_t>(i) * m + j] =
          acc / (static_cast<double>(g.scale) * g.scale);
    }
  return pooled;
}

// Looks for five consecutive runs in dark:light:dark:light:dark proportion
// 1:1:3:1:1, each segment within 20% of its expected length.
bool has_finder_profile(const std::vector<bool>& dark_line) {
  std::vector<std::pair<bool, int>> runs;
  for (bool d : dark_line) {
    if (!runs.empty() && runs.back().first == d)
      ++runs.back().second;
    else
      runs.push_back({d, 1});
  }
  if (runs.size() < 5) return false;
  for (std::size_t s = 0; s + 5 <= runs.size(); ++s) {
    if (!runs[s].first) continue;  // profile starts on a dark run
    double r0 = runs[s].second, r1 = runs[s + 1].second;
    double r2 = runs[s + 2].second, r3 = runs[s + 3].second;
    double r4 = runs[s + 4].second;
    double unit = (r0 + r1 + r2 + r3 + r4) / 7.0;
    if (unit <= 0) continue;
    auto within = [unit](double run, double expected_units) {
      double expected = expected_units * unit;
      return std::abs(run - expected) <= 0.2 * expected;
    };
    if (within(r0, 1) && within(r1, 1) && within(r2, 3) && within(r3, 1) &&
        within(r4, 1))
      return true;
  }
  return false;
}

std::vector<bool> binarize_line(const std::vector<double>& line) {
  double lo = *std::min_element(line.begin(), line.end());
  double hi = *std::max_element(line.begin(), line.end());
  std::vector<bool> dark(line.size(), false);
  if (hi - lo < 1e-9) return dark;  // uniform line carries no pattern
  double mid = lo + 0.5 * (hi - lo);
  for (std::size_t i = 0; i < line.size(); ++i) dark[i] = line[i] < mid;
  return dark;
}

}  // namespace

const char* decode_failure_name(DecodeFailure f) {
  switch (f) {
    case DecodeFailure::kNone: return "none";
    case DecodeFailure::kFormatUnreadable: return "format_unreadable";
    case DecodeFailure::kEccOverflow: return "ecc_overflow";
    case DecodeFailure::kFramingMismatch: return "framing_mismatch";
  }
  return "unknown";
}

int max_digest_bytes(int version, qr::Ecc ecc) {
  int cap = qr::byte_capacity(version, ecc) - 2 - kSignatureLength;
  return std::max(0, std::min(cap, kDigestBudget));
}

VisualPattern encode_pattern(const Bytes& digest, const Bytes& signature,
                             int version, std::optional<qr::Ecc> ecc) {
  if (signature.size() != kSignatureLength)
    throw Error("pattern", "signature must be exactly 64 bytes");
  if (static_cast<int>(digest.size()) > kDigestBudget)
    throw Error("pattern", "digest exceeds the 110-byte budget");

  Bytes payload;
  payload.reserve(2 + digest.size() + signature.size());
  payload.push_back(kFormatVersion);
  payload.push_back(static_cast<std::uint8_t>(digest.size()));
  payload.insert(payload.end(), digest.begin(), digest.end());
  payload.insert(payload.end(), signature.begin(), signature.end());

  qr::Ecc level;
  if (ecc.has_value()) {
    level = *ecc;
    int max_digest = max_digest_bytes(version, level);
    if (static_cast<int>(payload.size()) > qr::byte_capacity(version, level))
      throw Error("pattern",
                  "payload exceeds capacity; at most " +
                      std::to_string(max_digest) +
                      " digest bytes fit version " + std::to_string(version) +
                      " level " + qr::ecc_name(level));
  } else {
    int max_digest = max_digest_bytes(version, qr::Ecc::L);
    if (static_cast<int>(payload.size()) >
        qr::byte_capacity(version, qr::Ecc::L))
      throw Error("pattern",
                  "payload exceeds capacity; at most " +
                      std::to_string(max_digest) +
                      " digest bytes fit version " + std::to_string(version));
    level = qr::strongest_ecc_fitting(version, payload.size());
  }

  qr::EncodeResult enc = qr::encode_bytes(payload, version, level);
  VisualPattern p;
  p.modules = std::move(enc.matrix);
  p.version = enc.version;
  p.ecc = enc.ecc;
  return p;
}

std::optional<DecodedPayload> decode_pattern(const VisualPattern& pattern,
                                             DecodeFailure* failure) {
  auto set_failure = [failure](DecodeFailure f) {
    if (failure) *failure = f;
  };
  set_failure(DecodeFailure::kNone);

  if (pattern.modules.size != qr::side_length(pattern.version)) {
    set_failure(DecodeFailure::kFormatUnreadable);
    return std::nullopt;
  }
  std::string stage;
  auto decoded = qr::decode_matrix(pattern.modules, &stage);
  if (!decoded) {
    if (stage == "format")
      set_failure(DecodeFailure::kFormatUnreadable);
    else if (stage == "ecc")
      set_failure(DecodeFailure::kEccOverflow);
    else
      set_failure(DecodeFailure::kFramingMismatch);
    return std::nullopt;
  }

  const Bytes& payload = decoded->payload;
  if (payload.size() < 2 || payload[0] != kFormatVersion) {
    set_failure(DecodeFailure::kFramingMismatch);
    return std::nullopt;
  }
  int digest_len = payload[1];
  if (digest_len > kDigestBudget ||
      payload.size() != static_cast<std::size_t>(2 + digest_len +
                                                 kSignatureLength)) {
    set_failure(DecodeFailure::kFramingMismatch);
    return std::nullopt;
  }

  DecodedPayload out;
  out.digest.assign(payload.begin() + 2, payload.begin() + 2 + digest_len);
  out.signature.assign(payload.begin() + 2 + digest_len, payload.end());
  out.corrected_symbols = decoded->corrected_symbols;
  return out;
}

Image render_pattern(const VisualPattern& pattern, int height, int width) {
  int m = qr::side_length(pattern.version);
  if (pattern.modules.size != m)
    throw Error("pattern", "module matrix does not match declared version");
  Grid g = grid_for(pattern.version, height, width);

  Image out(height, width, 3);
  std::fill(out.data.begin(), out.data.end(), 1.0f);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      if (!pattern.modules.get(i, j)) continue;
      int y0 = g.origin_y + (4 + i) * g.scale;
      int x0 = g.origin_x + (4 + j) * g.scale;
      for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y0 + g.scale; ++y)
          for (int x = x0; x < x0 + g.scale; ++x) out.at(c, y, x) = 0.0f;
    }
  return out;
}

VisualPattern binarize_recovered(const Image& secret, int version,
                                 bool otsu) {
  Grid g = grid_for(version, secret.h, secret.w);
  int m = qr::side_length(version);
  std::vector<double> pooled = pooled_modules(secret, version, g);

  double lo = *std::min_element(pooled.begin(), pooled.end());
  double hi = *std::max_element(pooled.begin(), pooled.end());
  std::vector<double> norm(pooled.size(), 0.5);
  if (hi - lo > 1e-12)
    for (std::size_t i = 0; i < pooled.size(); ++i)
      norm[i] = (pooled[i] - lo) / (hi - lo);

  double threshold = otsu ? otsu_threshold(norm) : 0.5;
  VisualPattern p;
  p.version = version;
  p.modules = qr::Matrix(m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      p.modules.set(i, j, norm[static_cast<std::size_t>(i) * m + j] < threshold);
  return p;
}

std::optional<DecodedPayload> decode_recovered(const Image& secret,
                                               int version,
                                               DecodeFailure* failure) {
  VisualPattern first = binarize_recovered(secret, version, false);
  DecodeFailure f1 = DecodeFailure::kNone;
  auto result = decode_pattern(first, &f1);
  if (result) {
    if (failure) *failure = DecodeFailure::kNone;
    return result;
  }
  VisualPattern second = binarize_recovered(secret, version, true);
  DecodeFailure f2 = DecodeFailure::kNone;
  result = decode_pattern(second, &f2);
  if (failure) *failure = result ? DecodeFailure::kNone : f2;
  return result;
}

double tamper_score(const Image& secret, int version) {
  Grid g;
  try {
    g = grid_for(version, secret.h, secret.w);
  } catch (const Error&) {
    return 0.0;
  }
  int m = qr::side_length(version);

  // Finder centers in module coordinates (marker spans 7 modules).
  const std::array<std::pair<double, double>, 3> centers = {{
      {3.5, 3.5},
      {3.5, m - 3.5},
      {m - 3.5, 3.5},
  }};

  auto channel_avg = [&secret](int y, int x) {
    double v = 0.0;
    for (int c = 0; c < secret.c; ++c) v += secret.at(c, y, x);
    return v / secret.c;
  };

  int detected = 0;
  for (const auto& [cy_mod, cx_mod] : centers) {
    int cy = g.origin_y + static_cast<int>((4 + cy_mod) * g.scale);
    int cx = g.origin_x + static_cast<int>((4 + cx_mod) * g.scale);
    // Scan 11 modules across so the quiet margin bounds the runs.
    int half = static_cast<int>(5.5 * g.scale);

    std::vector<double> hline, vline;
    for (int x = std::max(0, cx - half);
         x < std::min(secret.w, cx + half); ++x)
      hline.push_back(channel_avg(cy, x));
    for (int y = std::max(0, cy - half);
         y < std::min(secret.h, cy + half); ++y)
      vline.push_back(channel_avg(y, cx));
    if (hline.empty() || vline.empty()) continue;

    bool ok_h = has_finder_profile(binarize_line(hline));
    bool ok_v = has_finder_profile(binarize_line(vline));
    if (ok_h && ok_v) ++detected;
  }
  return static_cast<double>(detected) / 3.0;
}

}  // namespace metaseal::pattern
