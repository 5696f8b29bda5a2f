#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "metaseal/tensor.hpp"

namespace metaseal::inn {

inline constexpr int kDefaultBlockCount = 16;
inline constexpr float kDefaultClamp = 2.0f;
inline constexpr int kGrowthChannels = 32;
inline constexpr int kDenseLayers = 5;
inline constexpr int kSubbandChannels = 12;  // 4 Haar subbands x 3 colors

// 3x3 convolution, stride 1, zero padding 1.
template <typename T>
struct ConvLayer {
  int in_ch = 0, out_ch = 0;
  std::vector<T> w;  // [out_ch][in_ch][3][3]
  std::vector<T> b;  // [out_ch]

  ConvLayer() = default;
  ConvLayer(int in, int out)
      : in_ch(in), out_ch(out),
        w(static_cast<std::size_t>(in) * out * 9, T(0)), b(out, T(0)) {}
};

// Five densely connected conv layers: each layer sees the block input
// concatenated with every previous feature map. The first four produce
// growth channels through LeakyReLU; the last projects back without
// activation and starts at zero so a fresh network is the identity.
template <typename T>
struct DenseBlock {
  std::vector<ConvLayer<T>> layers;
  int in_ch = 0, out_ch = 0, growth = kGrowthChannels;
};

template <typename T>
struct BlockParams {
  DenseBlock<T> phi, rho, eta;
};

template <typename T>
struct InnWeightsT {
  std::vector<BlockParams<T>> blocks;
  T clamp_constant = T(kDefaultClamp);
  int channels = kSubbandChannels;
};
using InnWeights = InnWeightsT<float>;

// Forward workspace of a dense block: the block input in the first in_ch
// channels followed by the four post-activation feature groups. Kept whole
// so backward can rebuild every layer's input by slicing.
template <typename T>
struct DenseCache {
  TensorT<T> workspace;
};

template <typename T>
struct BlockCache {
  DenseCache<T> phi, rho, eta;
  TensorT<T> v;    // forward: V_i; inverse: V2 - eta(I2)
  TensorT<T> sig;  // sigmoid(rho(...))
  TensorT<T> e;    // forward: exp(alpha); inverse: exp(-alpha)
};

template <typename T>
DenseBlock<T> make_dense_block(int in_ch, int out_ch,
                               int growth = kGrowthChannels);

// Hidden layers use scaled He initialization for the LeakyReLU slope; the
// final projection is zeroed, which makes every coupling block start as the
// identity map.
template <typename T>
InnWeightsT<T> make_weights(int block_count, int channels, T clamp, Rng& rng);

// Fills every layer, including final projections, with Gaussian weights.
// Only used by tests that need a non-degenerate bijection.
template <typename T>
void randomize_weights(InnWeightsT<T>& weights, Rng& rng, T scale);

template <typename T>
void for_each_param(InnWeightsT<T>& weights,
                    const std::function<void(std::vector<T>&)>& fn);
template <typename T>
std::size_t param_count(const InnWeightsT<T>& weights);

// Structurally identical container with every parameter zeroed; holds
// gradients and optimizer moments.
template <typename T>
InnWeightsT<T> zero_like(const InnWeightsT<T>& weights);

// Single-level orthonormal Haar transform. Input (n, c, h, w) with even
// h, w; output (n, 4c, h/2, w/2) ordered LL, LH, HL, HH per source channel
// group (subband-major). Exact inverse within float tolerance.
template <typename T>
TensorT<T> dwt_forward(const TensorT<T>& x);
template <typename T>
TensorT<T> dwt_inverse(const TensorT<T>& y);

Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);

template <typename T>
void conv3x3_forward(const ConvLayer<T>& layer, const TensorT<T>& x,
                     TensorT<T>& y);

template <typename T>
TensorT<T> dense_forward(const DenseBlock<T>& block, const TensorT<T>& x,
                         DenseCache<T>* cache = nullptr);
template <typename T>
TensorT<T> dense_backward(const DenseBlock<T>& block, const DenseCache<T>& cache,
                          const TensorT<T>& dout, DenseBlock<T>& grad);

// I2 = I + phi(V); V2 = V * exp(alpha(rho(I2))) + eta(I2),
// alpha(x) = clamp * (2 sigmoid(x) - 1).
template <typename T>
void block_forward(const BlockParams<T>& p, T clamp, const TensorT<T>& I,
                   const TensorT<T>& V, TensorT<T>& I2, TensorT<T>& V2,
                   BlockCache<T>* cache = nullptr);

// V = (V2 - eta(I2)) * exp(-alpha(rho(I2))); I = I2 - phi(V).
template <typename T>
void block_inverse(const BlockParams<T>& p, T clamp, const TensorT<T>& I2,
                   const TensorT<T>& V2, TensorT<T>& I, TensorT<T>& V,
                   BlockCache<T>* cache = nullptr);

template <typename T>
void block_backward(const BlockParams<T>& p, T clamp, const BlockCache<T>& cache,
                    const TensorT<T>& dI2, const TensorT<T>& dV2,
                    TensorT<T>& dI, TensorT<T>& dV, BlockParams<T>& grad);

template <typename T>
void block_inverse_backward(const BlockParams<T>& p, T clamp,
                            const BlockCache<T>& cache, const TensorT<T>& dI,
                            const TensorT<T>& dV, TensorT<T>& dI2,
                            TensorT<T>& dV2, BlockParams<T>& grad);

// Runs all blocks in place. Caches, when supplied, receive one entry per
// block in execution order.
template <typename T>
void forward_stack(const InnWeightsT<T>& weights, TensorT<T>& I, TensorT<T>& V,
                   std::vector<BlockCache<T>>* caches = nullptr);
template <typename T>
void inverse_stack(const InnWeightsT<T>& weights, TensorT<T>& I, TensorT<T>& V,
                   std::vector<BlockCache<T>>* caches = nullptr);

template <typename T>
void forward_stack_backward(const InnWeightsT<T>& weights,
                            const std::vector<BlockCache<T>>& caches,
                            TensorT<T>& dI, TensorT<T>& dV,
                            InnWeightsT<T>& grad);
template <typename T>
void inverse_stack_backward(const InnWeightsT<T>& weights,
                            const std::vector<BlockCache<T>>& caches,
                            TensorT<T>& dI, TensorT<T>& dV,
                            InnWeightsT<T>& grad);

struct EmbedResult {
  Image watermarked;            // clipped to [0, 1]
  Image watermarked_unclipped;  // retained only when debug is requested
  Tensor residual;              // final secret-branch coefficients (debug)
  bool has_debug = false;
};

enum class ZPolicy { kZeros, kSeededGaussian };

struct ExtractResult {
  Image approx_cover;
  Image recovered_secret;
};

// Embedding adds the inverse-transformed coefficient delta onto the cover,
// so a zero delta reproduces the cover bit for bit.
EmbedResult embed(const Image& cover, const Image& secret,
                  const InnWeights& weights, bool keep_debug = false);

ExtractResult extract(const Image& image, const InnWeights& weights,
                      ZPolicy policy = ZPolicy::kZeros, std::uint64_t seed = 0);

// Exact inversion: consumes the unclipped embed output and the retained
// residual instead of a z sample.
std::pair<Image, Image> invert_with_residual(const Image& watermarked_unclipped,
                                             const Tensor& residual,
                                             const InnWeights& weights);

}  // namespace metaseal::inn
