#include "metaseal/inn.hpp"

#include <cblas.h>

#include <cmath>

#include "metaseal/inn_detail.hpp"

namespace metaseal::inn {

namespace detail {

void gemm_rm(bool ta, bool tb, int m, int n, int k, float alpha,
             const float* a, int lda, const float* b, int ldb, float beta,
             float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
              beta, c, ldc);
}

void gemm_rm(bool ta, bool tb, int m, int n, int k, double alpha,
             const double* a, int lda, const double* b, int ldb, double beta,
             double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
              beta, c, ldc);
}

}  // namespace detail

namespace {

template <typename T>
void check_finite(const TensorT<T>& t, const char* what) {
  for (T v : t.v)
    if (!std::isfinite(static_cast<double>(v)))
      throw Error("inn", std::string("non-finite values in ") + what);
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

// col layout: rows = c_use * 9, cols = h * w; kernel offsets row-major.
template <typename T>
void im2col(const T* x, int c_use, int h, int w, T* col) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < c_use; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * plane;
        const T* src = x + static_cast<std::size_t>(c) * plane;
        for (int y = 0; y < h; ++y) {
          int sy = y + ky - 1;
          if (sy < 0 || sy >= h) {
            std::fill(dst + static_cast<std::size_t>(y) * w,
                      dst + static_cast<std::size_t>(y) * w + w, T(0));
            continue;
          }
          T* drow = dst + static_cast<std::size_t>(y) * w;
          const T* srow = src + static_cast<std::size_t>(sy) * w;
          int shift = kx - 1;
          for (int xx = 0; xx < w; ++xx) {
            int sx = xx + shift;
            drow[xx] = (sx < 0 || sx >= w) ? T(0) : srow[sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int c_use, int h, int w, T* dx) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < c_use; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src =
            col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * plane;
        T* dst = dx + static_cast<std::size_t>(c) * plane;
        for (int y = 0; y < h; ++y) {
          int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const T* srow = src + static_cast<std::size_t>(y) * w;
          T* drow = dst + static_cast<std::size_t>(sy) * w;
          int shift = kx - 1;
          for (int xx = 0; xx < w; ++xx) {
            int sx = xx + shift;
            if (sx >= 0 && sx < w) drow[sx] += srow[xx];
          }
        }
      }
    }
  }
}

}  // namespace

namespace detail {

// y must be preallocated to (n, layer.out_ch, h, w). Reads the first c_use
// channels of each x sample; x may have more channels (dense workspace).
template <typename T>
void conv_forward_ws(const ConvLayer<T>& layer, const TensorT<T>& x, int c_use,
                     TensorT<T>& y) {
  const int h = x.h, w = x.w, hw = h * w;
  const int k = c_use * 9;
  std::vector<T> col(static_cast<std::size_t>(k) * hw);
  for (int s = 0; s < x.n; ++s) {
    const T* xs = x.data() + static_cast<std::size_t>(s) * x.c * hw;
    T* ys = y.data() + static_cast<std::size_t>(s) * y.c * hw;
    im2col(xs, c_use, h, w, col.data());
    gemm_rm(false, false, layer.out_ch, hw, k, T(1), layer.w.data(), k,
            col.data(), hw, T(0), ys, hw);
    for (int oc = 0; oc < layer.out_ch; ++oc) {
      T bias = layer.b[oc];
      T* row = ys + static_cast<std::size_t>(oc) * hw;
      for (int i = 0; i < hw; ++i) row[i] += bias;
    }
  }
}

template <typename T>
void conv_backward_ws(const ConvLayer<T>& layer, const TensorT<T>& x,
                      int c_use, const TensorT<T>& dy, ConvLayer<T>& grad,
                      TensorT<T>& dx) {
  const int h = x.h, w = x.w, hw = h * w;
  const int k = c_use * 9;
  std::vector<T> col(static_cast<std::size_t>(k) * hw);
  std::vector<T> dcol(static_cast<std::size_t>(k) * hw);
  for (int s = 0; s < x.n; ++s) {
    const T* xs = x.data() + static_cast<std::size_t>(s) * x.c * hw;
    const T* dys = dy.data() + static_cast<std::size_t>(s) * dy.c * hw;
    T* dxs = dx.data() + static_cast<std::size_t>(s) * dx.c * hw;
    im2col(xs, c_use, h, w, col.data());
    // dW += dy . col^T
    gemm_rm(false, true, layer.out_ch, k, hw, T(1), dys, hw, col.data(), hw,
            T(1), grad.w.data(), k);
    for (int oc = 0; oc < layer.out_ch; ++oc) {
      const T* row = dys + static_cast<std::size_t>(oc) * hw;
      T acc = T(0);
      for (int i = 0; i < hw; ++i) acc += row[i];
      grad.b[oc] += acc;
    }
    // dcol = W^T . dy
    gemm_rm(true, false, k, hw, layer.out_ch, T(1), layer.w.data(), k, dys, hw,
            T(0), dcol.data(), hw);
    col2im_add(dcol.data(), c_use, h, w, dxs);
  }
}

template void conv_forward_ws<float>(const ConvLayer<float>&,
                                     const TensorT<float>&, int,
                                     TensorT<float>&);
template void conv_forward_ws<double>(const ConvLayer<double>&,
                                      const TensorT<double>&, int,
                                      TensorT<double>&);
template void conv_backward_ws<float>(const ConvLayer<float>&,
                                      const TensorT<float>&, int,
                                      const TensorT<float>&, ConvLayer<float>&,
                                      TensorT<float>&);
template void conv_backward_ws<double>(const ConvLayer<double>&,
                                       const TensorT<double>&, int,
                                       const TensorT<double>&,
                                       ConvLayer<double>&, TensorT<double>&);

}  // namespace detail

template <typename T>
DenseBlock<T> make_dense_block(int in_ch, int out_ch, int growth) {
  DenseBlock<T> block;
  block.in_ch = in_ch;
  block.out_ch = out_ch;
  block.growth = growth;
  for (int i = 0; i < kDenseLayers - 1; ++i)
    block.layers.emplace_back(in_ch + i * growth, growth);
  block.layers.emplace_back(in_ch + (kDenseLayers - 1) * growth, out_ch);
  return block;
}

template <typename T>
InnWeightsT<T> make_weights(int block_count, int channels, T clamp, Rng& rng) {
  if (block_count <= 0) throw Error("inn", "block count must be positive");
  InnWeightsT<T> weights;
  weights.clamp_constant = clamp;
  weights.channels = channels;
  const double slope = 0.2;
  for (int b = 0; b < block_count; ++b) {
    BlockParams<T> params;
    for (DenseBlock<T>* net : {&params.phi, &params.rho, &params.eta}) {
      *net = make_dense_block<T>(channels, channels);
      for (int l = 0; l < kDenseLayers - 1; ++l) {
        ConvLayer<T>& layer = net->layers[l];
        double fan_in = static_cast<double>(layer.in_ch) * 9.0;
        double stddev = std::sqrt(2.0 / (1.0 + slope * slope) / fan_in);
        for (T& v : layer.w) v = static_cast<T>(rng.gaussian() * stddev);
      }
      // Final projection stays zero: the block starts as the identity.
    }
    weights.blocks.push_back(std::move(params));
  }
  return weights;
}

template <typename T>
void randomize_weights(InnWeightsT<T>& weights, Rng& rng, T scale) {
  for_each_param<T>(weights, [&](std::vector<T>& p) {
    for (T& v : p) v = static_cast<T>(rng.gaussian()) * scale;
  });
}

template <typename T>
void for_each_param(InnWeightsT<T>& weights,
                    const std::function<void(std::vector<T>&)>& fn) {
  for (BlockParams<T>& block : weights.blocks)
    for (DenseBlock<T>* net : {&block.phi, &block.rho, &block.eta})
      for (ConvLayer<T>& layer : net->layers) {
        fn(layer.w);
        fn(layer.b);
      }
}

template <typename T>
std::size_t param_count(const InnWeightsT<T>& weights) {
  std::size_t count = 0;
  for (const BlockParams<T>& block : weights.blocks)
    for (const DenseBlock<T>* net : {&block.phi, &block.rho, &block.eta})
      for (const ConvLayer<T>& layer : net->layers)
        count += layer.w.size() + layer.b.size();
  return count;
}

template <typename T>
InnWeightsT<T> zero_like(const InnWeightsT<T>& weights) {
  InnWeightsT<T> out = weights;
  for_each_param<T>(out, [](std::vector<T>& p) {
    std::fill(p.begin(), p.end(), T(0));
  });
  return out;
}

template <typename T>
TensorT<T> dwt_forward(const TensorT<T>& x) {
  if (x.h % 2 != 0 || x.w % 2 != 0)
    throw Error("inn", "wavelet transform requires even dimensions");
  TensorT<T> y(x.n, x.c * 4, x.h / 2, x.w / 2);
  const int hh = x.h / 2, hw = x.w / 2;
  for (int s = 0; s < x.n; ++s)
    for (int c = 0; c < x.c; ++c)
      for (int i = 0; i < hh; ++i)
        for (int j = 0; j < hw; ++j) {
          T a = x.at(s, c, 2 * i, 2 * j);
          T b = x.at(s, c, 2 * i, 2 * j + 1);
          T cc = x.at(s, c, 2 * i + 1, 2 * j);
          T d = x.at(s, c, 2 * i + 1, 2 * j + 1);
          y.at(s, 0 * x.c + c, i, j) = (a + b + cc + d) / T(2);
          y.at(s, 1 * x.c + c, i, j) = (a - b + cc - d) / T(2);
          y.at(s, 2 * x.c + c, i, j) = (a + b - cc - d) / T(2);
          y.at(s, 3 * x.c + c, i, j) = (a - b - cc + d) / T(2);
        }
  return y;
}

template <typename T>
TensorT<T> dwt_inverse(const TensorT<T>& y) {
  if (y.c % 4 != 0) throw Error("inn", "subband tensor needs 4k channels");
  const int c_out = y.c / 4;
  TensorT<T> x(y.n, c_out, y.h * 2, y.w * 2);
  for (int s = 0; s < y.n; ++s)
    for (int c = 0; c < c_out; ++c)
      for (int i = 0; i < y.h; ++i)
        for (int j = 0; j < y.w; ++j) {
          T ll = y.at(s, 0 * c_out + c, i, j);
          T lh = y.at(s, 1 * c_out + c, i, j);
          T hl = y.at(s, 2 * c_out + c, i, j);
          T hh = y.at(s, 3 * c_out + c, i, j);
          x.at(s, c, 2 * i, 2 * j) = (ll + lh + hl + hh) / T(2);
          x.at(s, c, 2 * i, 2 * j + 1) = (ll - lh + hl - hh) / T(2);
          x.at(s, c, 2 * i + 1, 2 * j) = (ll + lh - hl - hh) / T(2);
          x.at(s, c, 2 * i + 1, 2 * j + 1) = (ll - lh - hl + hh) / T(2);
        }
  return x;
}

Tensor image_to_tensor(const Image& img) {
  Tensor t(1, img.c, img.h, img.w);
  std::copy(img.data.begin(), img.data.end(), t.v.begin());
  return t;
}

Image tensor_to_image(const Tensor& t) {
  if (t.n != 1) throw Error("inn", "expected a single-sample tensor");
  Image img(t.h, t.w, t.c);
  std::copy(t.v.begin(), t.v.end(), img.data.begin());
  return img;
}

template <typename T>
void conv3x3_forward(const ConvLayer<T>& layer, const TensorT<T>& x,
                     TensorT<T>& y) {
  if (x.c < layer.in_ch) throw Error("inn", "conv input channel mismatch");
  y = TensorT<T>(x.n, layer.out_ch, x.h, x.w);
  detail::conv_forward_ws(layer, x, layer.in_ch, y);
}

template <typename T>
TensorT<T> dense_forward(const DenseBlock<T>& block, const TensorT<T>& x,
                         DenseCache<T>* cache) {
  if (x.c != block.in_ch) throw Error("inn", "dense block channel mismatch");
  const int total_ch = block.in_ch + (kDenseLayers - 1) * block.growth;
  TensorT<T> ws(x.n, total_ch, x.h, x.w);
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  // Copy input into the head of the workspace.
  for (int s = 0; s < x.n; ++s)
    std::copy(x.data() + static_cast<std::size_t>(s) * x.c * plane,
              x.data() + static_cast<std::size_t>(s + 1) * x.c * plane,
              ws.data() + static_cast<std::size_t>(s) * total_ch * plane);

  TensorT<T> feat(x.n, block.growth, x.h, x.w);
  for (int l = 0; l < kDenseLayers - 1; ++l) {
    const ConvLayer<T>& layer = block.layers[l];
    detail::conv_forward_ws(layer, ws, layer.in_ch, feat);
    // LeakyReLU and append to the workspace.
    for (int s = 0; s < x.n; ++s) {
      T* dst = ws.data() + (static_cast<std::size_t>(s) * total_ch +
                            block.in_ch + l * block.growth) *
                               plane;
      const T* src = feat.data() + static_cast<std::size_t>(s) * feat.c * plane;
      for (std::size_t i = 0; i < static_cast<std::size_t>(feat.c) * plane; ++i)
        dst[i] = src[i] > T(0) ? src[i] : src[i] * T(0.2);
    }
  }
  const ConvLayer<T>& last = block.layers[kDenseLayers - 1];
  TensorT<T> out(x.n, last.out_ch, x.h, x.w);
  detail::conv_forward_ws(last, ws, last.in_ch, out);
  if (cache) cache->workspace = std::move(ws);
  return out;
}

template <typename T>
void block_forward(const BlockParams<T>& p, T clamp, const TensorT<T>& I,
                   const TensorT<T>& V, TensorT<T>& I2, TensorT<T>& V2,
                   BlockCache<T>* cache) {
  if (!I.same_shape(V)) throw Error("inn", "branch shape mismatch");
  TensorT<T> t = dense_forward(p.phi, V, cache ? &cache->phi : nullptr);
  I2 = I;
  for (std::size_t i = 0; i < I2.v.size(); ++i) I2.v[i] += t.v[i];

  TensorT<T> u = dense_forward(p.rho, I2, cache ? &cache->rho : nullptr);
  TensorT<T> sig = u;
  for (T& v : sig.v) v = sigmoid(v);
  TensorT<T> e = sig;
  for (T& v : e.v) v = std::exp(clamp * (T(2) * v - T(1)));

  TensorT<T> h = dense_forward(p.eta, I2, cache ? &cache->eta : nullptr);
  V2 = V;
  for (std::size_t i = 0; i < V2.v.size(); ++i)
    V2.v[i] = V.v[i] * e.v[i] + h.v[i];

  check_finite(I2, "coupling forward cover branch");
  check_finite(V2, "coupling forward secret branch");
  if (cache) {
    cache->v = V;
    cache->sig = std::move(sig);
    cache->e = std::move(e);
  }
}

template <typename T>
void block_inverse(const BlockParams<T>& p, T clamp, const TensorT<T>& I2,
                   const TensorT<T>& V2, TensorT<T>& I, TensorT<T>& V,
                   BlockCache<T>* cache) {
  if (!I2.same_shape(V2)) throw Error("inn", "branch shape mismatch");
  TensorT<T> u = dense_forward(p.rho, I2, cache ? &cache->rho : nullptr);
  TensorT<T> sig = u;
  for (T& v : sig.v) v = sigmoid(v);
  TensorT<T> em = sig;
  for (T& v : em.v) v = std::exp(-clamp * (T(2) * v - T(1)));

  TensorT<T> h = dense_forward(p.eta, I2, cache ? &cache->eta : nullptr);
  TensorT<T> vd = V2;
  for (std::size_t i = 0; i < vd.v.size(); ++i) vd.v[i] -= h.v[i];
  V = vd;
  for (std::size_t i = 0; i < V.v.size(); ++i) V.v[i] = vd.v[i] * em.v[i];

  TensorT<T> t = dense_forward(p.phi, V, cache ? &cache->phi : nullptr);
  I = I2;
  for (std::size_t i = 0; i < I.v.size(); ++i) I.v[i] -= t.v[i];

  check_finite(I, "coupling inverse cover branch");
  check_finite(V, "coupling inverse secret branch");
  if (cache) {
    cache->v = std::move(vd);
    cache->sig = std::move(sig);
    cache->e = std::move(em);
  }
}

template <typename T>
void forward_stack(const InnWeightsT<T>& weights, TensorT<T>& I, TensorT<T>& V,
                   std::vector<BlockCache<T>>* caches) {
  if (caches) caches->resize(weights.blocks.size());
  TensorT<T> I2, V2;
  for (std::size_t b = 0; b < weights.blocks.size(); ++b) {
    block_forward(weights.blocks[b], weights.clamp_constant, I, V, I2, V2,
                  caches ? &(*caches)[b] : nullptr);
    I = std::move(I2);
    V = std::move(V2);
    I2 = TensorT<T>();
    V2 = TensorT<T>();
  }
}

template <typename T>
void inverse_stack(const InnWeightsT<T>& weights, TensorT<T>& I, TensorT<T>& V,
                   std::vector<BlockCache<T>>* caches) {
  if (caches) caches->resize(weights.blocks.size());
  TensorT<T> I0, V0;
  for (std::size_t i = 0; i < weights.blocks.size(); ++i) {
    std::size_t b = weights.blocks.size() - 1 - i;
    block_inverse(weights.blocks[b], weights.clamp_constant, I, V, I0, V0,
                  caches ? &(*caches)[i] : nullptr);
    I = std::move(I0);
    V = std::move(V0);
    I0 = TensorT<T>();
    V0 = TensorT<T>();
  }
}

EmbedResult embed(const Image& cover, const Image& secret,
                  const InnWeights& weights, bool keep_debug) {
  if (cover.h != secret.h || cover.w != secret.w)
    throw Error("inn", "cover and secret must share spatial size");
  if (cover.c != 3 || secret.c != 3)
    throw Error("inn", "embedding expects 3-channel images");
  if (cover.h % 2 != 0 || cover.w % 2 != 0)
    throw Error("inn", "embedding requires even dimensions");

  Tensor I = dwt_forward(image_to_tensor(cover));
  Tensor V = dwt_forward(image_to_tensor(secret));
  Tensor I_in = I;
  forward_stack<float>(weights, I, V, nullptr);

  Tensor delta = I;
  for (std::size_t i = 0; i < delta.v.size(); ++i) delta.v[i] -= I_in.v[i];
  Tensor d_img = dwt_inverse(delta);

  EmbedResult result;
  result.watermarked = cover;
  Image unclipped = cover;
  for (std::size_t i = 0; i < unclipped.data.size(); ++i) {
    unclipped.data[i] += d_img.v[i];
    result.watermarked.data[i] = clamp01(unclipped.data[i]);
  }
  if (keep_debug) {
    result.watermarked_unclipped = std::move(unclipped);
    result.residual = std::move(V);
    result.has_debug = true;
  }
  return result;
}

ExtractResult extract(const Image& image, const InnWeights& weights,
                      ZPolicy policy, std::uint64_t seed) {
  if (image.c != 3) throw Error("inn", "extraction expects 3-channel images");
  if (image.h % 2 != 0 || image.w % 2 != 0)
    throw Error("inn", "extraction requires even dimensions");

  Tensor I = dwt_forward(image_to_tensor(image));
  Tensor V(I.n, I.c, I.h, I.w);
  if (policy == ZPolicy::kSeededGaussian) {
    Rng rng(seed);
    for (float& v : V.v) v = static_cast<float>(rng.gaussian());
  }
  inverse_stack<float>(weights, I, V, nullptr);

  ExtractResult result;
  result.approx_cover = tensor_to_image(dwt_inverse(I));
  for (float& v : result.approx_cover.data) v = clamp01(v);
  result.recovered_secret = tensor_to_image(dwt_inverse(V));
  return result;
}

std::pair<Image, Image> invert_with_residual(const Image& watermarked_unclipped,
                                             const Tensor& residual,
                                             const InnWeights& weights) {
  Tensor I = dwt_forward(image_to_tensor(watermarked_unclipped));
  Tensor V = residual;
  inverse_stack<float>(weights, I, V, nullptr);
  return {tensor_to_image(dwt_inverse(I)), tensor_to_image(dwt_inverse(V))};
}

#define METASEAL_INSTANTIATE(T)                                               \
  template DenseBlock<T> make_dense_block<T>(int, int, int);                  \
  template InnWeightsT<T> make_weights<T>(int, int, T, Rng&);                 \
  template void randomize_weights<T>(InnWeightsT<T>&, Rng&, T);               \
  template void for_each_param<T>(InnWeightsT<T>&,                            \
                                  const std::function<void(std::vector<T>&)>&); \
  template std::size_t param_count<T>(const InnWeightsT<T>&);                 \
  template InnWeightsT<T> zero_like<T>(const InnWeightsT<T>&);                \
  template TensorT<T> dwt_forward<T>(const TensorT<T>&);                      \
  template TensorT<T> dwt_inverse<T>(const TensorT<T>&);                      \
  template void conv3x3_forward<T>(const ConvLayer<T>&, const TensorT<T>&,    \
                                   TensorT<T>&);                              \
  template TensorT<T> dense_forward<T>(const DenseBlock<T>&,                  \
                                       const TensorT<T>&, DenseCache<T>*);    \
  template void block_forward<T>(const BlockParams<T>&, T, const TensorT<T>&, \
                                 const TensorT<T>&, TensorT<T>&, TensorT<T>&, \
                                 BlockCache<T>*);                             \
  template void block_inverse<T>(const BlockParams<T>&, T, const TensorT<T>&, \
                                 const TensorT<T>&, TensorT<T>&, TensorT<T>&, \
                                 BlockCache<T>*);                             \
  template void forward_stack<T>(const InnWeightsT<T>&, TensorT<T>&,          \
                                 TensorT<T>&, std::vector<BlockCache<T>>*);   \
  template void inverse_stack<T>(const InnWeightsT<T>&, TensorT<T>&,          \
                                 TensorT<T>&, std::vector<BlockCache<T>>*);

METASEAL_INSTANTIATE(float)
METASEAL_INSTANTIATE(double)
#undef METASEAL_INSTANTIATE

}  // namespace metaseal::inn
