#include "metaseal/gf256.hpp"

#include <array>

namespace metaseal::gf256 {

namespace {

struct Tables {
  std::array<std::uint8_t, 512> exp_table;
  std::array<int, 256> log_table;

  Tables() {
    int x = 1;
    for (int i = 0; i < 255; ++i) {
      exp_table[i] = static_cast<std::uint8_t>(x);
      log_table[x] = i;
      x <<= 1;
      if (x & 0x100) x ^= 0x11d;
    }
    for (int i = 255; i < 512; ++i) exp_table[i] = exp_table[i - 255];
    log_table[0] = -1;
  }
};

const Tables& tables() {
  static const Tables t;
  return t;
}

}  // namespace

std::uint8_t mul(std::uint8_t a, std::uint8_t b) {
  if (a == 0 || b == 0) return 0;
  const Tables& t = tables();
  return t.exp_table[t.log_table[a] + t.log_table[b]];
}

std::uint8_t exp(int power) {
  power %= 255;
  if (power < 0) power += 255;
  return tables().exp_table[power];
}

std::uint8_t inverse(std::uint8_t a) {
  if (a == 0) throw Error("gf256", "zero has no inverse");
  return exp(255 - tables().log_table[a]);
}

std::vector<std::uint8_t> generator_poly(int degree) {
  std::vector<std::uint8_t> g{1};
  for (int i = 0; i < degree; ++i) {
    // g *= (x - alpha^i); subtraction and addition coincide in GF(2^8).
    std::vector<std::uint8_t> next(g.size() + 1, 0);
    std::uint8_t root = exp(i);
    for (std::size_t j = 0; j < g.size(); ++j) {
      next[j] ^= g[j];
      next[j + 1] ^= mul(g[j], root);
    }
    g = std::move(next);
  }
  return g;
}

RsCode::RsCode(int n_, int k_) : n(n_), k(k_) {
  if (k <= 0 || n <= k || n > 255)
    throw Error("reed_solomon", "invalid code parameters");
}

std::vector<std::uint8_t> RsCode::encode(
    const std::vector<std::uint8_t>& data) const {
  if (static_cast<int>(data.size()) != k)
    throw Error("reed_solomon", "encoder expects exactly k data symbols");
  std::vector<std::uint8_t> gen = generator_poly(parity());

  // Polynomial long division of data * x^(n-k) by the generator.
  std::vector<std::uint8_t> remainder(parity(), 0);
  for (int i = 0; i < k; ++i) {
    std::uint8_t factor = data[i] ^ remainder[0];
    remainder.erase(remainder.begin());
    remainder.push_back(0);
    if (factor != 0) {
      for (int j = 0; j < parity(); ++j)
        remainder[j] ^= mul(gen[j + 1], factor);
    }
  }

  std::vector<std::uint8_t> codeword = data;
  codeword.insert(codeword.end(), remainder.begin(), remainder.end());
  return codeword;
}

std::optional<std::vector<std::uint8_t>> RsCode::decode(
    const std::vector<std::uint8_t>& codeword) const {
  if (static_cast<int>(codeword.size()) != n)
    throw Error("reed_solomon", "decoder expects exactly n symbols");
  const int num_par = parity();

  // Syndromes S_i = C(alpha^i) for i = 0 .. n-k-1.
  std::vector<std::uint8_t> synd(num_par, 0);
  bool clean = true;
  for (int i = 0; i < num_par; ++i) {
    std::uint8_t s = 0;
    std::uint8_t xi = exp(i);
    for (std::uint8_t cw : codeword) s = static_cast<std::uint8_t>(mul(s, xi) ^ cw);
    synd[i] = s;
    if (s != 0) clean = false;
  }
  if (clean)
    return std::vector<std::uint8_t>(codeword.begin(), codeword.begin() + k);

  // Berlekamp-Massey for the error locator polynomial (lowest order first).
  std::vector<std::uint8_t> sigma{1}, prev{1};
  int l = 0, m = 1;
  std::uint8_t b = 1;
  for (int i = 0; i < num_par; ++i) {
    std::uint8_t delta = synd[i];
    for (int j = 1; j <= l; ++j)
      if (j < static_cast<int>(sigma.size()))
        delta ^= mul(sigma[j], synd[i - j]);
    if (delta == 0) {
      ++m;
    } else if (2 * l <= i) {
      std::vector<std::uint8_t> tmp = sigma;
      std::uint8_t scale = mul(delta, inverse(b));
      std::vector<std::uint8_t> shifted(prev.size() + m, 0);
      for (std::size_t j = 0; j < prev.size(); ++j)
        shifted[j + m] = mul(prev[j], scale);
      if (shifted.size() > sigma.size()) sigma.resize(shifted.size(), 0);
      for (std::size_t j = 0; j < shifted.size(); ++j) sigma[j] ^= shifted[j];
      l = i + 1 - l;
      prev = std::move(tmp);
      b = delta;
      m = 1;
    } else {
      std::uint8_t scale = mul(delta, inverse(b));
      std::vector<std::uint8_t> shifted(prev.size() + m, 0);
      for (std::size_t j = 0; j < prev.size(); ++j)
        shifted[j + m] = mul(prev[j], scale);
      if (shifted.size() > sigma.size()) sigma.resize(shifted.size(), 0);
      for (std::size_t j = 0; j < shifted.size(); ++j) sigma[j] ^= shifted[j];
      ++m;
    }
  }
  while (!sigma.empty() && sigma.back() == 0) sigma.pop_back();
  int num_errors = static_cast<int>(sigma.size()) - 1;
  if (num_errors <= 0 || num_errors > correctable()) return std::nullopt;

  // Chien search over the positions actually present in the codeword.
  // Position p (0 = first symbol) corresponds to locator X = alpha^(n-1-p).
  std::vector<int> error_positions;
  for (int p = 0; p < n; ++p) {
    int loc_log = n - 1 - p;
    std::uint8_t x_inv = exp(255 - (loc_log % 255));
    std::uint8_t acc = 0;
    std::uint8_t xpow = 1;
    for (std::uint8_t coeff : sigma) {
      acc ^= mul(coeff, xpow);
      xpow = mul(xpow, x_inv);
    }
    if (acc == 0) error_positions.push_back(p);
  }
  if (static_cast<int>(error_positions.size()) != num_errors)
    return std::nullopt;

  // Forney: magnitudes from the error evaluator omega = S * sigma mod x^(n-k).
  std::vector<std::uint8_t> omega(num_par, 0);
  for (int i = 0; i < num_par; ++i) {
    std::uint8_t acc = 0;
    for (int j = 0; j <= i && j < static_cast<int>(sigma.size()); ++j)
      acc ^= mul(sigma[j], synd[i - j]);
    omega[i] = acc;
  }
  // Formal derivative of sigma keeps odd-degree terms only.
  std::vector<std::uint8_t> sigma_deriv;
  for (std::size_t j = 1; j < sigma.size(); j += 2)
    sigma_deriv.push_back(sigma[j]);

  std::vector<std::uint8_t> corrected = codeword;
  for (int p : error_positions) {
    int loc_log = (n - 1 - p) % 255;
    std::uint8_t x = exp(loc_log);
    std::uint8_t x_inv = exp(255 - loc_log);

    std::uint8_t omega_val = 0, xpow = 1;
    for (std::uint8_t coeff : omega) {
      omega_val ^= mul(coeff, xpow);
      xpow = mul(xpow, x_inv);
    }
    std::uint8_t deriv_val = 0;
    std::uint8_t x_inv2 = mul(x_inv, x_inv);
    xpow = 1;
    for (std::uint8_t coeff : sigma_deriv) {
      deriv_val ^= mul(coeff, xpow);
      xpow = mul(xpow, x_inv2);
    }
    if (deriv_val == 0) return std::nullopt;
    // magnitude = X * omega(X^-1) / sigma'(X^-1) for the alpha^0-rooted code.
    std::uint8_t magnitude = mul(x, mul(omega_val, inverse(deriv_val)));
    corrected[p] ^= magnitude;
  }

  // Re-check the syndromes; miscorrections beyond the radius must not pass.
  for (int i = 0; i < num_par; ++i) {
    std::uint8_t s = 0;
    std::uint8_t xi = exp(i);
    for (std::uint8_t cw : corrected) s = static_cast<std::uint8_t>(mul(s, xi) ^ cw);
    if (s != 0) return std::nullopt;
  }
  return std::vector<std::uint8_t>(corrected.begin(), corrected.begin() + k);
}

}  // namespace metaseal::gf256
