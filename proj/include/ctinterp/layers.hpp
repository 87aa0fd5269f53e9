// SPDX-License-Identifier: Apache-2.0
//
// Stateless layer kernels with explicit backward passes. Parameters live in
// flat per-network vectors; a ConvSpec records where its weights sit.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ctinterp/tensor.hpp"

namespace ctinterp {

inline constexpr double kLeakySlope = 0.2;

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  std::size_t patch_size() const { return static_cast<std::size_t>(in_channels) * kernel * kernel; }
  std::size_t weight_count() const { return patch_size() * out_channels; }
  std::size_t param_count() const { return weight_count() + out_channels; }
  int out_extent(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

/// Appends a conv layer to a flat parameter layout and returns its spec.
inline ConvSpec add_conv(std::size_t& cursor, int cin, int cout, int kernel, int stride, int pad) {
  ConvSpec s{cin, cout, kernel, stride, pad, cursor, 0};
  s.bias_offset = cursor + s.weight_count();
  cursor += s.param_count();
  return s;
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Column matrix of shape (cin*k*k) x (n*ho*wo), row-major.
template <typename T>
void im2col(const ConvSpec& s, const Tensor<T>& x, int ho, int wo, std::vector<T>& col) {
  const int n = x.n(), h = x.h(), w = x.w();
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  const std::size_t cols = plane * n;
  col.assign(s.patch_size() * cols, T(0));
  for (int ci = 0; ci < s.in_channels; ++ci) {
    for (int ky = 0; ky < s.kernel; ++ky) {
      for (int kx = 0; kx < s.kernel; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(ci) * s.kernel + ky) * s.kernel + kx;
        T* dst_row = col.data() + row * cols;
        for (int b = 0; b < n; ++b) {
          const T* src = x.data() + (static_cast<std::size_t>(b) * s.in_channels + ci) * h * w;
          T* dst = dst_row + b * plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * s.stride - s.pad + ky;
            if (iy < 0 || iy >= h) continue;
            const T* src_row = src + static_cast<std::size_t>(iy) * w;
            T* d = dst + static_cast<std::size_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * s.stride - s.pad + kx;
              if (ix >= 0 && ix < w) d[ox] = src_row[ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvSpec& s, const std::vector<T>& col, int ho, int wo, Tensor<T>& dx) {
  const int n = dx.n(), h = dx.h(), w = dx.w();
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  const std::size_t cols = plane * n;
  for (int ci = 0; ci < s.in_channels; ++ci) {
    for (int ky = 0; ky < s.kernel; ++ky) {
      for (int kx = 0; kx < s.kernel; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(ci) * s.kernel + ky) * s.kernel + kx;
        const T* src_row = col.data() + row * cols;
        for (int b = 0; b < n; ++b) {
          T* dst = dx.data() + (static_cast<std::size_t>(b) * s.in_channels + ci) * h * w;
          const T* src = src_row + b * plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * s.stride - s.pad + ky;
            if (iy < 0 || iy >= h) continue;
            T* d = dst + static_cast<std::size_t>(iy) * w;
            const T* sr = src + static_cast<std::size_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * s.stride - s.pad + kx;
              if (ix >= 0 && ix < w) d[ix] += sr[ox];
            }
          }
        }
      }
    }
  }
}

// (cout) x (n*plane) matrix <-> NCHW tensor.
template <typename T>
void gather_output(const Tensor<T>& y, std::vector<T>& mat) {
  const std::size_t plane = static_cast<std::size_t>(y.h()) * y.w();
  const std::size_t cols = plane * y.n();
  mat.resize(static_cast<std::size_t>(y.c()) * cols);
  for (int b = 0; b < y.n(); ++b)
    for (int c = 0; c < y.c(); ++c)
      std::copy_n(y.data() + (static_cast<std::size_t>(b) * y.c() + c) * plane, plane,
                  mat.data() + c * cols + b * plane);
}

template <typename T>
void scatter_output(const std::vector<T>& mat, Tensor<T>& y) {
  const std::size_t plane = static_cast<std::size_t>(y.h()) * y.w();
  const std::size_t cols = plane * y.n();
  for (int b = 0; b < y.n(); ++b)
    for (int c = 0; c < y.c(); ++c)
      std::copy_n(mat.data() + c * cols + b * plane, plane,
                  y.data() + (static_cast<std::size_t>(b) * y.c() + c) * plane);
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d_forward(const ConvSpec& s, std::span<const T> params, const Tensor<T>& x) {
  if (x.c() != s.in_channels) throw ShapeError("conv2d: input channel mismatch");
  const int ho = s.out_extent(x.h()), wo = s.out_extent(x.w());
  if (ho < 1 || wo < 1) throw ShapeError("conv2d: input too small for kernel");
  const Eigen::Index cols = static_cast<Eigen::Index>(ho) * wo * x.n();
  const auto k = static_cast<Eigen::Index>(s.patch_size());

  std::vector<T> col;
  detail::im2col(s, x, ho, wo, col);
  Eigen::Map<const detail::RowMat<T>> wmat(params.data() + s.weight_offset, s.out_channels, k);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(params.data() + s.bias_offset, s.out_channels);
  Eigen::Map<const detail::RowMat<T>> cmat(col.data(), k, cols);

  std::vector<T> out(static_cast<std::size_t>(s.out_channels) * cols);
  Eigen::Map<detail::RowMat<T>> omat(out.data(), s.out_channels, cols);
  omat.noalias() = wmat * cmat;
  omat.colwise() += bias;

  Tensor<T> y(x.n(), s.out_channels, ho, wo);
  detail::scatter_output(out, y);
  return y;
}

/// Accumulates parameter gradients into `grads`; writes the input gradient
/// into `dx` when it is non-null.
template <typename T>
void conv2d_backward(const ConvSpec& s, std::span<const T> params, const Tensor<T>& x,
                     const Tensor<T>& dy, std::span<T> grads, Tensor<T>* dx) {
  const int ho = dy.h(), wo = dy.w();
  const Eigen::Index cols = static_cast<Eigen::Index>(ho) * wo * x.n();
  const auto k = static_cast<Eigen::Index>(s.patch_size());

  std::vector<T> dmat_storage;
  detail::gather_output(dy, dmat_storage);
  Eigen::Map<const detail::RowMat<T>> dmat(dmat_storage.data(), s.out_channels, cols);

  std::vector<T> col;
  detail::im2col(s, x, ho, wo, col);
  Eigen::Map<const detail::RowMat<T>> cmat(col.data(), k, cols);

  Eigen::Map<detail::RowMat<T>> gw(grads.data() + s.weight_offset, s.out_channels, k);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(grads.data() + s.bias_offset, s.out_channels);
  gw.noalias() += dmat * cmat.transpose();
  // Plain loop: Eigen's vectorized reductions peel by pointer alignment,
  // which would make the rounding depend on where the allocator put us.
  for (Eigen::Index o = 0; o < s.out_channels; ++o) {
    T acc = 0;
    for (Eigen::Index j = 0; j < cols; ++j) acc += dmat(o, j);
    gb(o) += acc;
  }

  if (dx != nullptr) {
    Eigen::Map<const detail::RowMat<T>> wmat(params.data() + s.weight_offset, s.out_channels, k);
    Eigen::Map<detail::RowMat<T>> dcol(col.data(), k, cols);
    dcol.noalias() = wmat.transpose() * dmat;
    *dx = Tensor<T>(x.n(), x.c(), x.h(), x.w());
    detail::col2im(s, col, ho, wo, *dx);
  }
}

template <typename T>
Tensor<T> leaky_relu(Tensor<T> x) {
  for (T& v : x.storage()) v = v > T(0) ? v : T(kLeakySlope) * v;
  return x;
}

/// `y` is the activation output; its sign matches the pre-activation.
template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& y, Tensor<T> dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(y.data()[i] > T(0))) dy.data()[i] *= T(kLeakySlope);
  return dy;
}

template <typename T>
Tensor<T> sigmoid(Tensor<T> x) {
  for (T& v : x.storage()) v = T(1) / (T(1) + std::exp(-v));
  return x;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, Tensor<T> dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const T p = y.data()[i];
    dy.data()[i] *= p * (T(1) - p);
  }
  return dy;
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
  for (int b = 0; b < x.n(); ++b)
    for (int c = 0; c < x.c(); ++c)
      for (int iy = 0; iy < y.h(); ++iy)
        for (int ix = 0; ix < y.w(); ++ix) y(b, c, iy, ix) = x(b, c, iy / 2, ix / 2);
  return y;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
  for (int b = 0; b < dy.n(); ++b)
    for (int c = 0; c < dy.c(); ++c)
      for (int iy = 0; iy < dy.h(); ++iy)
        for (int ix = 0; ix < dy.w(); ++ix) dx(b, c, iy / 2, ix / 2) += dy(b, c, iy, ix);
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw ShapeError("concat_channels: " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> y(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int i = 0; i < a.n(); ++i) {
    std::copy_n(a.sample(i), a.sample_size(), y.sample(i));
    std::copy_n(b.sample(i), b.sample_size(), y.sample(i) + a.sample_size());
  }
  return y;
}

/// Splits a channel-concatenated gradient back into its two parts.
template <typename T>
void split_channels(const Tensor<T>& dy, int first_channels, Tensor<T>& da, Tensor<T>& db) {
  da = Tensor<T>(dy.n(), first_channels, dy.h(), dy.w());
  db = Tensor<T>(dy.n(), dy.c() - first_channels, dy.h(), dy.w());
  for (int i = 0; i < dy.n(); ++i) {
    std::copy_n(dy.sample(i), da.sample_size(), da.sample(i));
    std::copy_n(dy.sample(i) + da.sample_size(), db.sample_size(), db.sample(i));
  }
}

/// (N,C,H,W) -> (N,C,1,1)
template <typename T>
Tensor<T> global_mean(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), 1, 1);
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  for (int b = 0; b < x.n(); ++b)
    for (int c = 0; c < x.c(); ++c) {
      const T* p = x.data() + (static_cast<std::size_t>(b) * x.c() + c) * plane;
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      y(b, c, 0, 0) = acc / static_cast<T>(plane);
    }
  return y;
}

template <typename T>
Tensor<T> global_mean_backward(const Tensor<T>& dy, int h, int w) {
  Tensor<T> dx(dy.n(), dy.c(), h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int b = 0; b < dy.n(); ++b)
    for (int c = 0; c < dy.c(); ++c) {
      const T g = dy(b, c, 0, 0) / static_cast<T>(plane);
      T* p = dx.data() + (static_cast<std::size_t>(b) * dy.c() + c) * plane;
      std::fill_n(p, plane, g);
    }
  return dx;
}

}  // namespace ctinterp
