#include <cmath>

#include "metaseal/inn_detail.hpp"

namespace metaseal::inn {

namespace {

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& t, int c0, int count) {
  TensorT<T> out(t.n, count, t.h, t.w);
  const std::size_t plane = static_cast<std::size_t>(t.h) * t.w;
  for (int s = 0; s < t.n; ++s)
    std::copy(t.data() + (static_cast<std::size_t>(s) * t.c + c0) * plane,
              t.data() + (static_cast<std::size_t>(s) * t.c + c0 + count) * plane,
              out.data() + static_cast<std::size_t>(s) * count * plane);
  return out;
}

}  // namespace

template <typename T>
TensorT<T> dense_backward(const DenseBlock<T>& block, const DenseCache<T>& cache,
                          const TensorT<T>& dout, DenseBlock<T>& grad) {
  const TensorT<T>& ws = cache.workspace;
  TensorT<T> d_ws(ws.n, ws.c, ws.h, ws.w);
  const std::size_t plane = static_cast<std::size_t>(ws.h) * ws.w;

  const ConvLayer<T>& last = block.layers[kDenseLayers - 1];
  detail::conv_backward_ws(last, ws, last.in_ch, dout,
                           grad.layers[kDenseLayers - 1], d_ws);

  for (int l = kDenseLayers - 2; l >= 0; --l) {
    const int c0 = block.in_ch + l * block.growth;
    TensorT<T> dpre = slice_channels(d_ws, c0, block.growth);
    // LeakyReLU derivative from the cached post-activation values.
    for (int s = 0; s < ws.n; ++s) {
      const T* f = ws.data() + (static_cast<std::size_t>(s) * ws.c + c0) * plane;
      T* dp = dpre.data() + static_cast<std::size_t>(s) * block.growth * plane;
      for (std::size_t i = 0; i < static_cast<std::size_t>(block.growth) * plane;
           ++i)
        if (f[i] <= T(0)) dp[i] *= T(0.2);
    }
    const ConvLayer<T>& layer = block.layers[l];
    detail::conv_backward_ws(layer, ws, layer.in_ch, dpre, grad.layers[l],
                             d_ws);
  }
  return slice_channels(d_ws, 0, block.in_ch);
}

template <typename T>
void block_backward(const BlockParams<T>& p, T clamp, const BlockCache<T>& cache,
                    const TensorT<T>& dI2, const TensorT<T>& dV2,
                    TensorT<T>& dI, TensorT<T>& dV, BlockParams<T>& grad) {
  const std::size_t count = dV2.v.size();

  // V2 = V * e + h with e = exp(clamp * (2 sig - 1)).
  dV = dV2;
  for (std::size_t i = 0; i < count; ++i) dV.v[i] = dV2.v[i] * cache.e.v[i];

  TensorT<T> du = dV2;
  for (std::size_t i = 0; i < count; ++i) {
    T de = dV2.v[i] * cache.v.v[i];
    T da = de * cache.e.v[i];
    T sig = cache.sig.v[i];
    du.v[i] = da * clamp * T(2) * sig * (T(1) - sig);
  }

  TensorT<T> dI2_total = dI2;
  TensorT<T> from_rho = dense_backward(p.rho, cache.rho, du, grad.rho);
  TensorT<T> from_eta = dense_backward(p.eta, cache.eta, dV2, grad.eta);
  for (std::size_t i = 0; i < count; ++i)
    dI2_total.v[i] += from_rho.v[i] + from_eta.v[i];

  dI = dI2_total;
  TensorT<T> from_phi = dense_backward(p.phi, cache.phi, dI2_total, grad.phi);
  for (std::size_t i = 0; i < count; ++i) dV.v[i] += from_phi.v[i];
}

template <typename T>
void block_inverse_backward(const BlockParams<T>& p, T clamp,
                            const BlockCache<T>& cache, const TensorT<T>& dI,
                            const TensorT<T>& dV, TensorT<T>& dI2,
                            TensorT<T>& dV2, BlockParams<T>& grad) {
  const std::size_t count = dI.v.size();

  // I = I2 - phi(V): gradient into phi's output is -dI.
  TensorT<T> dt = dI;
  for (T& v : dt.v) v = -v;
  TensorT<T> dV_total = dV;
  TensorT<T> from_phi = dense_backward(p.phi, cache.phi, dt, grad.phi);
  for (std::size_t i = 0; i < count; ++i) dV_total.v[i] += from_phi.v[i];

  // V = (V2 - h) * em with em = exp(-alpha); cache.v holds V2 - h.
  dV2 = dV_total;
  for (std::size_t i = 0; i < count; ++i)
    dV2.v[i] = dV_total.v[i] * cache.e.v[i];

  TensorT<T> du = dV_total;
  for (std::size_t i = 0; i < count; ++i) {
    T dem = dV_total.v[i] * cache.v.v[i];
    T da = -dem * cache.e.v[i];
    T sig = cache.sig.v[i];
    du.v[i] = da * clamp * T(2) * sig * (T(1) - sig);
  }
  TensorT<T> dh = dV2;
  for (T& v : dh.v) v = -v;

  dI2 = dI;
  TensorT<T> from_rho = dense_backward(p.rho, cache.rho, du, grad.rho);
  TensorT<T> from_eta = dense_backward(p.eta, cache.eta, dh, grad.eta);
  for (std::size_t i = 0; i < count; ++i)
    dI2.v[i] += from_rho.v[i] + from_eta.v[i];
}

template <typename T>
void forward_stack_backward(const InnWeightsT<T>& weights,
                            const std::vector<BlockCache<T>>& caches,
                            TensorT<T>& dI, TensorT<T>& dV,
                            InnWeightsT<T>& grad) {
  if (caches.size() != weights.blocks.size())
    throw Error("inn", "cache/block count mismatch");
  TensorT<T> dI_in, dV_in;
  for (std::size_t i = weights.blocks.size(); i-- > 0;) {
    block_backward(weights.blocks[i], weights.clamp_constant, caches[i], dI,
                   dV, dI_in, dV_in, grad.blocks[i]);
    dI = std::move(dI_in);
    dV = std::move(dV_in);
    dI_in = TensorT<T>();
    dV_in = TensorT<T>();
  }
}

template <typename T>
void inverse_stack_backward(const InnWeightsT<T>& weights,
                            const std::vector<BlockCache<T>>& caches,
                            TensorT<T>& dI, TensorT<T>& dV,
                            InnWeightsT<T>& grad) {
  if (caches.size() != weights.blocks.size())
    throw Error("inn", "cache/block count mismatch");
  TensorT<T> dI2, dV2;
  const std::size_t n = weights.blocks.size();
  for (std::size_t i = n; i-- > 0;) {
    // Execution step i ran block n-1-i; walk steps in reverse.
    std::size_t b = n - 1 - i;
    block_inverse_backward(weights.blocks[b], weights.clamp_constant,
                           caches[i], dI, dV, dI2, dV2, grad.blocks[b]);
    dI = std::move(dI2);
    dV = std::move(dV2);
    dI2 = TensorT<T>();
    dV2 = TensorT<T>();
  }
}

#define METASEAL_INSTANTIATE(T)                                                \
  template TensorT<T> dense_backward<T>(const DenseBlock<T>&,                  \
                                        const DenseCache<T>&,                  \
                                        const TensorT<T>&, DenseBlock<T>&);    \
  template void block_backward<T>(const BlockParams<T>&, T,                    \
                                  const BlockCache<T>&, const TensorT<T>&,     \
                                  const TensorT<T>&, TensorT<T>&, TensorT<T>&, \
                                  BlockParams<T>&);                            \
  template void block_inverse_backward<T>(                                     \
      const BlockParams<T>&, T, const BlockCache<T>&, const TensorT<T>&,       \
      const TensorT<T>&, TensorT<T>&, TensorT<T>&, BlockParams<T>&);           \
  template void forward_stack_backward<T>(                                     \
      const InnWeightsT<T>&, const std::vector<BlockCache<T>>&, TensorT<T>&,   \
      TensorT<T>&, InnWeightsT<T>&);                                           \
  template void inverse_stack_backward<T>(                                     \
      const InnWeightsT<T>&, const std::vector<BlockCache<T>>&, TensorT<T>&,   \
      TensorT<T>&, InnWeightsT<T>&);

METASEAL_INSTANTIATE(float)
METASEAL_INSTANTIATE(double)
#undef METASEAL_INSTANTIATE

}  // namespace metaseal::inn
