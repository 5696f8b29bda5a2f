#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "metaseal/common.hpp"

namespace metaseal {

// Dense NCHW tensor. Training runs in float; gradient checking instantiates
// the same kernels in double.
template <typename T>
struct TensorT {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  TensorT() = default;
  TensorT(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {}

  std::size_t size() const { return v.size(); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& at(int in, int ic, int iy, int ix) {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  T at(int in, int ic, int iy, int ix) const {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }

  bool same_shape(const TensorT& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  void fill(T value) { std::fill(v.begin(), v.end(), value); }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(n, c, h, w);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

// Planar channel-major raster in [0, 1]. c is 1 or 3.
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h_, int w_, int c_)
      : h(h_), w(w_), c(c_),
        data(static_cast<std::size_t>(h_) * w_ * c_, 0.0f) {}

  float& at(int ch, int y, int x) {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  float at(int ch, int y, int x) const {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }

  std::size_t size() const { return data.size(); }
};

// Quantizes to 8-bit and back, matching what a lossless save/load round trip
// produces. Embedding outputs pass through this so on-disk and in-memory
// verification agree.
Image quantize_u8(const Image& img);
std::vector<std::uint8_t> to_u8(const Image& img);
Image from_u8(const std::uint8_t* data, int h, int w, int c);

}  // namespace metaseal
