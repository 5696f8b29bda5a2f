#pragma once

#include <vector>

#include "metaseal/common.hpp"
#include "metaseal/qr.hpp"
#include "metaseal/tensor.hpp"

namespace metaseal::metrics {

// Peak signal-to-noise ratio in dB over [0,1] images, capped at 99 dB for
// identical inputs.
inline constexpr double kPsnrCap = 99.0;
double psnr(const Image& a, const Image& b);

// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
// K1=0.01, K2=0.03, dynamic range 1.0. Window statistics are taken over the
// fully-covered interior; channels are averaged.
double ssim(const Image& a, const Image& b);

// Fraction of differing bits between two equal-length byte strings.
double ber(const Bytes& a, const Bytes& b);
double rec_acc_bit(const Bytes& a, const Bytes& b);

// Fraction of equal modules between two patterns of the same size.
double rec_acc_pattern(const qr::Matrix& a, const qr::Matrix& b);

// Mean of per-image verification outcomes. Empty input is an error.
double ver_acc(const std::vector<bool>& signature_valid);

// Probability that N independent bits all survive a channel with bit error
// rate p_e: (1 - p_e)^N.
double p_bit_success(double p_e, int num_bits);

// Probability that an (n, k) Reed-Solomon codeword decodes across a channel
// with symbol error rate p_s: at most floor((n-k)/2) symbol errors occur.
double p_pattern_success(int n, int k, double p_s);

}  // namespace metaseal::metrics
