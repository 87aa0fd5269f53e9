// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "ctinterp/tensor.hpp"

namespace ctinterp {

/// Single-channel raster, row-major, intensities nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return pixels.size(); }
  bool same_shape(const Image& o) const { return height == o.height && width == o.width; }

  bool in_unit_range() const {
    return std::all_of(pixels.begin(), pixels.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
  }

  friend bool operator==(const Image&, const Image&) = default;
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": image shape mismatch");
}

/// Stacks images into an (N,1,H,W) batch.
template <typename T>
Tensor<T> to_batch(std::span<const Image> images) {
  if (images.empty()) return {};
  const int h = images.front().height, w = images.front().width;
  Tensor<T> out(static_cast<int>(images.size()), 1, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != h || images[i].width != w) throw ShapeError("to_batch: mixed image sizes");
    std::transform(images[i].pixels.begin(), images[i].pixels.end(), out.sample(static_cast<int>(i)),
                   [](float v) { return static_cast<T>(v); });
  }
  return out;
}

template <typename T>
Tensor<T> to_batch(const Image& image) {
  return to_batch<T>(std::span<const Image>(&image, 1));
}

template <typename T>
Image from_batch(const Tensor<T>& batch, int index) {
  if (batch.c() != 1) throw ShapeError("from_batch: expected one channel");
  Image img(batch.h(), batch.w());
  std::transform(batch.sample(index), batch.sample(index) + batch.sample_size(), img.pixels.begin(),
                 [](T v) { return static_cast<float>(v); });
  return img;
}

template <typename T>
std::vector<Image> from_batch(const Tensor<T>& batch) {
  std::vector<Image> out;
  out.reserve(batch.n());
  for (int i = 0; i < batch.n(); ++i) out.push_back(from_batch(batch, i));
  return out;
}

}  // namespace ctinterp
