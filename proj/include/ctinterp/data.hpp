// SPDX-License-Identifier: Apache-2.0
//
// Slice volumes, synthetic phantoms, dataset splits and the two samplers
// that feed training (random pairs and consecutive runs).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctinterp/image.hpp"
#include "ctinterp/random.hpp"

namespace ctinterp {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One ellipsoid of a phantom. x/y are in pixels, z in slice-index units.
/// The cross-section centre drifts sinusoidally along z and the in-plane
/// semi-axes breathe by `axis_modulation`.
struct Ellipsoid {
  double cx = 0, cy = 0, cz = 0;
  double ax = 1, ay = 1, az = 1;
  double drift_x = 0, drift_y = 0;
  double axis_modulation = 0;
  double frequency = 0;  ///< cycles over the slice stack
  double phase = 0;
  double intensity = 1;

  friend bool operator==(const Ellipsoid&, const Ellipsoid&) = default;
};

struct PhantomParams {
  int image_size = 64;
  int slice_count = 24;
  double slice_thickness_mm = 5.0;
  int num_bodies = 3;
  double noise_sigma = 0.01;
  double background = 0.0;
  /// Explicit bodies; when empty, `num_bodies` are drawn from the seed.
  std::vector<Ellipsoid> bodies;

  friend bool operator==(const PhantomParams&, const PhantomParams&) = default;
};

struct Provenance {
  bool phantom = false;
  std::uint64_t seed = 0;
};

struct SliceVolume {
  std::string subject_id;
  double slice_thickness_mm = 1.0;
  std::vector<Image> slices;
  Provenance provenance;

  int size() const { return static_cast<int>(slices.size()); }

  void validate() const {
    if (slices.size() < 2) throw DataError("volume '" + subject_id + "' has fewer than 2 slices");
    if (!(slice_thickness_mm > 0.0 && slice_thickness_mm < 100.0))
      throw DataError("volume '" + subject_id + "' has implausible slice thickness");
    for (const auto& s : slices)
      if (!s.same_shape(slices.front())) throw DataError("volume '" + subject_id + "' mixes slice dimensions");
  }
};

namespace detail {

inline void validate_phantom(const PhantomParams& p) {
  if (p.image_size < 4) throw DataError("phantom image_size must be >= 4");
  if (p.slice_count < 2) throw DataError("phantom slice_count must be >= 2");
  if (!(p.slice_thickness_mm > 0.0 && p.slice_thickness_mm < 100.0))
    throw DataError("phantom slice_thickness_mm must lie in (0, 100)");
  if (p.num_bodies < 0) throw DataError("phantom num_bodies must be >= 0");
  if (!(p.noise_sigma >= 0.0)) throw DataError("phantom noise_sigma must be >= 0");
  if (!(p.background >= 0.0 && p.background <= 1.0)) throw DataError("phantom background must lie in [0, 1]");
  for (const auto& b : p.bodies) {
    if (!(b.ax > 0 && b.ay > 0 && b.az > 0)) throw DataError("phantom body has non-positive semi-axis");
    if (!(b.intensity >= 0.0 && b.intensity <= 1.0)) throw DataError("phantom body intensity outside [0, 1]");
    if (!(b.axis_modulation >= 0.0 && b.axis_modulation < 1.0))
      throw DataError("phantom body axis_modulation must lie in [0, 1)");
    const double reach_x = b.ax * (1 + b.axis_modulation) + std::abs(b.drift_x);
    const double reach_y = b.ay * (1 + b.axis_modulation) + std::abs(b.drift_y);
    if (b.cx - reach_x < 0 || b.cx + reach_x > p.image_size || b.cy - reach_y < 0 || b.cy + reach_y > p.image_size)
      throw DataError("phantom body does not fit inside the image");
  }
}

inline std::vector<Ellipsoid> random_bodies(const PhantomParams& p, std::uint64_t seed) {
  Rng rng(seed);
  const double s = p.image_size, z = p.slice_count;
  std::vector<Ellipsoid> bodies;
  for (int i = 0; i < p.num_bodies; ++i) {
    Ellipsoid b;
    b.ax = rng.uniform(0.10, 0.24) * s;
    b.ay = rng.uniform(0.10, 0.24) * s;
    b.az = rng.uniform(0.6, 1.2) * z;
    b.cz = rng.uniform(0.2, 0.8) * (z - 1);
    b.axis_modulation = rng.uniform(0.1, 0.3);
    b.drift_x = rng.uniform(0.03, 0.10) * s;
    b.drift_y = rng.uniform(0.03, 0.10) * s;
    b.frequency = rng.uniform(0.5, 1.5);
    b.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    b.intensity = rng.uniform(0.4, 1.0);
    const double rx = b.ax * (1 + b.axis_modulation) + b.drift_x;
    const double ry = b.ay * (1 + b.axis_modulation) + b.drift_y;
    b.cx = rng.uniform(rx, s - rx);
    b.cy = rng.uniform(ry, s - ry);
    bodies.push_back(b);
  }
  return bodies;
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2));
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdull;
  x ^= x >> 33;
  return x;
}

}  // namespace detail

/// Bodies actually rendered for (params, seed).
inline std::vector<Ellipsoid> phantom_bodies(const PhantomParams& p, std::uint64_t seed) {
  return p.bodies.empty() ? detail::random_bodies(p, seed) : p.bodies;
}

/// Noise-free cross-section of the continuous phantom at fractional slice
/// position `t`. Each pixel is 4x4 supersampled; bodies composite in order.
inline Image render_cross_section(const PhantomParams& p, std::span<const Ellipsoid> bodies, double t) {
  constexpr int kSub = 4;
  Image img(p.image_size, p.image_size, static_cast<float>(p.background));
  for (const auto& b : bodies) {
    const double dz = (t - b.cz) / b.az;
    if (std::abs(dz) >= 1.0) continue;
    const double shrink = std::sqrt(1.0 - dz * dz);
    const double theta = 2.0 * std::numbers::pi * b.frequency * t / p.slice_count + b.phase;
    const double cx = b.cx + b.drift_x * std::sin(theta);
    const double cy = b.cy + b.drift_y * std::cos(theta);
    const double ax = b.ax * (1.0 + b.axis_modulation * std::sin(theta + 1.3)) * shrink;
    const double ay = b.ay * (1.0 + b.axis_modulation * std::cos(theta + 0.7)) * shrink;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - ax)));
    const int x1 = std::min(p.image_size - 1, static_cast<int>(std::ceil(cx + ax)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - ay)));
    const int y1 = std::min(p.image_size - 1, static_cast<int>(std::ceil(cy + ay)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        int inside = 0;
        for (int sy = 0; sy < kSub; ++sy)
          for (int sx = 0; sx < kSub; ++sx) {
            const double px = (x + (sx + 0.5) / kSub - cx) / ax;
            const double py = (y + (sy + 0.5) / kSub - cy) / ay;
            if (px * px + py * py <= 1.0) ++inside;
          }
        if (inside == 0) continue;
        const double cover = static_cast<double>(inside) / (kSub * kSub);
        float& v = img.at(y, x);
        v = static_cast<float>(v * (1.0 - cover) + b.intensity * cover);
      }
    }
  }
  return img;
}

inline Image render_cross_section(const PhantomParams& p, std::uint64_t seed, double t) {
  detail::validate_phantom(p);
  const auto bodies = phantom_bodies(p, seed);
  return render_cross_section(p, bodies, t);
}

/// Deterministic phantom volume for (params, seed). Slice i is the exact
/// cross-section at t = i plus additive Gaussian noise, clamped to [0, 1].
inline SliceVolume synth_phantom(const PhantomParams& p, std::uint64_t seed) {
  detail::validate_phantom(p);
  const auto bodies = phantom_bodies(p, seed);
  SliceVolume vol;
  vol.subject_id = "phantom-" + std::to_string(seed);
  vol.slice_thickness_mm = p.slice_thickness_mm;
  vol.provenance = {true, seed};
  for (int i = 0; i < p.slice_count; ++i) {
    Image img = render_cross_section(p, bodies, i);
    if (p.noise_sigma > 0.0) {
      Rng noise(detail::mix_seed(seed, static_cast<std::uint64_t>(i)));
      for (float& v : img.pixels) v = static_cast<float>(v + p.noise_sigma * noise.normal());
    }
    for (float& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
    vol.slices.push_back(std::move(img));
  }
  return vol;
}

/// `count` phantom volumes with seeds base_seed, base_seed + 1, ...
inline std::vector<SliceVolume> synth_phantom_corpus(const PhantomParams& p, int count, std::uint64_t base_seed) {
  std::vector<SliceVolume> out;
  for (int i = 0; i < count; ++i) out.push_back(synth_phantom(p, base_seed + static_cast<std::uint64_t>(i)));
  return out;
}

// ---- resizing ------------------------------------------------------------

/// Bilinear resampling with pixel-centre alignment and clamped borders.
inline Image resize_bilinear(const Image& src, int height, int width) {
  if (height < 1 || width < 1) throw RangeError("resize target must be positive");
  if (src.height < 1 || src.width < 1) throw ShapeError("cannot resize an empty image");
  if (src.height == height && src.width == width) return src;
  Image out(height, width);
  const double sy = static_cast<double>(src.height) / height, sx = static_cast<double>(src.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const double top = src.at(y0, x0) * (1 - wx) + src.at(y0, x1) * wx;
      const double bot = src.at(y1, x0) * (1 - wx) + src.at(y1, x1) * wx;
      out.at(y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
    }
  }
  return out;
}

/// Resizes every slice to size x size in place.
inline void resize_volume(SliceVolume& v, int size) {
  for (auto& s : v.slices) s = resize_bilinear(s, size, size);
}

// ---- splitting -----------------------------------------------------------

struct DatasetSplit {
  std::vector<SliceVolume> train;
  std::vector<SliceVolume> test;
  double ratio = 0.9;           ///< requested train fraction by slice count
  double realized_ratio = 0.0;  ///< achieved train fraction by slice count
  bool ratio_within_tolerance = true;
};

/// Volume-level split by slice count; volumes never straddle the split.
inline DatasetSplit split_dataset(std::vector<SliceVolume> volumes, double ratio, std::uint64_t seed) {
  if (volumes.size() < 2) throw DataError("split_dataset needs at least 2 volumes");
  if (!(ratio > 0.0 && ratio < 1.0)) throw RangeError("split ratio must lie in (0, 1)");
  std::vector<std::size_t> order(volumes.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  double total = 0;
  for (const auto& v : volumes) total += v.size();
  const double want_test = total * (1.0 - ratio);
  std::size_t best = 1;
  double best_err = 1e300, acc = 0;
  for (std::size_t k = 1; k < order.size(); ++k) {
    acc += volumes[order[k - 1]].size();
    const double err = std::abs(acc - want_test);
    if (err < best_err) {
      best_err = err;
      best = k;
    }
  }
  DatasetSplit split;
  split.ratio = ratio;
  double test_slices = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& v = volumes[order[k]];
    if (k < best) {
      test_slices += v.size();
      split.test.push_back(std::move(v));
    } else {
      split.train.push_back(std::move(v));
    }
  }
  split.realized_ratio = (total - test_slices) / total;
  split.ratio_within_tolerance = std::abs(split.realized_ratio - ratio) <= 0.02;
  return split;
}

// ---- samplers ------------------------------------------------------------

struct SliceRef {
  int volume = 0;
  int index = 0;
  friend bool operator==(const SliceRef&, const SliceRef&) = default;
};

/// Uniform draw over every slice of every volume.
inline SliceRef sample_slice(std::span<const SliceVolume> volumes, Rng& rng) {
  std::uint64_t total = 0;
  for (const auto& v : volumes) total += v.slices.size();
  if (total == 0) throw DataError("cannot sample from an empty split");
  std::uint64_t k = rng.below(total);
  for (int i = 0; i < static_cast<int>(volumes.size()); ++i) {
    if (k < volumes[i].slices.size()) return {i, static_cast<int>(k)};
    k -= volumes[i].slices.size();
  }
  throw std::logic_error("unreachable");
}

/// Two independent uniform slice draws; the pair may span subjects.
inline std::pair<SliceRef, SliceRef> sample_pair_refs(std::span<const SliceVolume> volumes, Rng& rng) {
  const SliceRef a = sample_slice(volumes, rng);
  const SliceRef b = sample_slice(volumes, rng);
  return {a, b};
}

inline std::pair<Image, Image> sample_pair(std::span<const SliceVolume> volumes, Rng& rng) {
  const auto [a, b] = sample_pair_refs(volumes, rng);
  return {volumes[a.volume].slices[a.index], volumes[b.volume].slices[b.index]};
}

struct RunSample {
  std::vector<Image> slices;
  std::string subject_id;
  int volume = 0;
  int start = 0;
};

/// Number of length-n windows available across the volumes.
inline std::uint64_t count_windows(std::span<const SliceVolume> volumes, int n) {
  std::uint64_t total = 0;
  for (const auto& v : volumes)
    if (v.size() >= n) total += static_cast<std::uint64_t>(v.size() - n + 1);
  return total;
}

/// n consecutive slices of one volume; uniform over all valid windows.
inline RunSample sample_consecutive_run(std::span<const SliceVolume> volumes, int n, Rng& rng) {
  if (n < 1) throw RangeError("run length must be positive");
  const std::uint64_t windows = count_windows(volumes, n);
  if (windows == 0) throw DataError("no volume has " + std::to_string(n) + " consecutive slices");
  std::uint64_t k = rng.below(windows);
  for (int i = 0; i < static_cast<int>(volumes.size()); ++i) {
    const auto& v = volumes[i];
    if (v.size() < n) continue;
    const auto here = static_cast<std::uint64_t>(v.size() - n + 1);
    if (k < here) {
      RunSample run;
      run.subject_id = v.subject_id;
      run.volume = i;
      run.start = static_cast<int>(k);
      run.slices.assign(v.slices.begin() + run.start, v.slices.begin() + run.start + n);
      return run;
    }
    k -= here;
  }
  throw std::logic_error("unreachable");
}

/// Interior coefficients for a run of length n: alpha_i = 1 - i/(n-1),
/// i = 1..n-2, so the slice next to the first endpoint gets the largest.
inline std::vector<double> run_alphas(int n) {
  if (n < 3) throw RangeError("run length must be >= 3");
  std::vector<double> a;
  for (int i = 1; i <= n - 2; ++i) a.push_back(1.0 - static_cast<double>(i) / (n - 1));
  return a;
}

}  // namespace ctinterp
