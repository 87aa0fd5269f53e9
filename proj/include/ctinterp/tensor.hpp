// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctinterp {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RangeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Per-sample feature-map shape (channels x height x width).
struct MapShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  friend bool operator==(const MapShape&, const MapShape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << height << "x" << width << "x" << channels;
    return os.str();
  }
};

/// Dense NCHW tensor. Owns its storage; copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : n_(n), c_(c), h_(h), w_(w),
        data_(static_cast<std::size_t>(n) * c * h * w, fill) {
    if (n < 0 || c < 0 || h < 0 || w < 0) throw ShapeError("negative tensor extent");
  }
  Tensor(int n, MapShape s, T fill = T(0)) : Tensor(n, s.channels, s.height, s.width, fill) {}

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  MapShape sample_shape() const { return {c_, h_, w_}; }
  std::size_t size() const { return data_.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(c_) * h_ * w_; }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T* sample(int i) { return data_.data() + i * sample_size(); }
  const T* sample(int i) const { return data_.data() + i * sample_size(); }

  T& operator()(int i, int ch, int y, int x) {
    return data_[((static_cast<std::size_t>(i) * c_ + ch) * h_ + y) * w_ + x];
  }
  const T& operator()(int i, int ch, int y, int x) const {
    return data_[((static_cast<std::size_t>(i) * c_ + ch) * h_ + y) * w_ + x];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[" << n_ << "," << c_ << "," << h_ << "," << w_ << "]";
    return os.str();
  }

  /// Copy of samples [first, first + count).
  Tensor slice(int first, int count) const {
    if (first < 0 || count < 0 || first + count > n_) throw ShapeError("tensor slice out of range");
    Tensor out(count, c_, h_, w_);
    std::copy_n(sample(first), count * sample_size(), out.data());
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n_, c_, h_, w_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

/// Concatenate along the batch axis.
template <typename T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.sample_shape() != b.sample_shape()) throw ShapeError("concat_batch: sample shape mismatch");
  Tensor<T> out(a.n() + b.n(), a.c(), a.h(), a.w());
  std::copy_n(a.data(), a.size(), out.data());
  std::copy_n(b.data(), b.size(), out.data() + a.size());
  return out;
}

}  // namespace ctinterp
