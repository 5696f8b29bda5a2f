#pragma once

// Shared kernels between the forward implementation and the gradient code.
// Not part of the public surface.

#include "metaseal/inn.hpp"

namespace metaseal::inn::detail {

void gemm_rm(bool ta, bool tb, int m, int n, int k, float alpha,
             const float* a, int lda, const float* b, int ldb, float beta,
             float* c, int ldc);
void gemm_rm(bool ta, bool tb, int m, int n, int k, double alpha,
             const double* a, int lda, const double* b, int ldb, double beta,
             double* c, int ldc);

// 3x3 convolution over the first c_use channels of x (which may be a wider
// dense-block workspace). y must be preallocated (n, out_ch, h, w).
template <typename T>
void conv_forward_ws(const ConvLayer<T>& layer, const TensorT<T>& x, int c_use,
                     TensorT<T>& y);

// Accumulates parameter gradients into grad and input gradients into the
// first c_use channels of dx.
template <typename T>
void conv_backward_ws(const ConvLayer<T>& layer, const TensorT<T>& x,
                      int c_use, const TensorT<T>& dy, ConvLayer<T>& grad,
                      TensorT<T>& dx);

}  // namespace metaseal::inn::detail
