// SPDX-License-Identifier: Apache-2.0
//
// Inserting synthesized slices between acquired ones.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ctinterp/data.hpp"
#include "ctinterp/image.hpp"
#include "ctinterp/model.hpp"

namespace ctinterp {

/// k coefficients (k..1)/(k+1): the first output sits next to the first
/// endpoint, the last next to the second.
inline std::vector<double> interpolation_alphas(int k) {
  if (k < 1) throw RangeError("k must be >= 1");
  std::vector<double> a;
  for (int j = k; j >= 1; --j) a.push_back(static_cast<double>(j) / (k + 1));
  return a;
}

/// ceil(source / target) - 1 new slices per gap.
inline int inserted_per_gap(double source_mm, double target_mm) {
  if (!(target_mm > 0.0)) throw RangeError("target thickness must be positive");
  if (!(target_mm < source_mm))
    throw RangeError("target thickness " + std::to_string(target_mm) + " mm must be below the source thickness " +
                     std::to_string(source_mm) + " mm");
  // Guard against 5.0 / 1.0 landing a hair above 5.
  const double ratio = source_mm / target_mm;
  const double nearest = std::round(ratio);
  const int gaps = std::abs(ratio - nearest) < 1e-9 ? static_cast<int>(nearest) : static_cast<int>(std::ceil(ratio));
  return gaps - 1;
}

inline SliceVolume resample_volume(const ModelState<float>& s, const SliceVolume& v, double target_mm) {
  v.validate();
  const int k = inserted_per_gap(v.slice_thickness_mm, target_mm);
  const auto alphas = interpolation_alphas(k);
  SliceVolume out;
  out.subject_id = v.subject_id;
  out.slice_thickness_mm = v.slice_thickness_mm / (k + 1);
  out.provenance = v.provenance;
  for (int i = 0; i + 1 < v.size(); ++i) {
    out.slices.push_back(v.slices[i]);
    for (auto& im : interpolate_between(s, v.slices[i], v.slices[i + 1], alphas)) out.slices.push_back(std::move(im));
  }
  out.slices.push_back(v.slices.back());
  return out;
}

/// One row: the images side by side separated by `gap` pixels of `fill`.
inline Image tile_row(std::span<const Image> row, int gap = 2, float fill = 1.0f) {
  if (row.empty()) return {};
  const int h = row.front().height, w = row.front().width;
  for (const auto& im : row)
    if (im.height != h || im.width != w) throw ShapeError("tile_row: images differ in size");
  const int n = static_cast<int>(row.size());
  Image out(h, n * w + (n - 1) * gap, fill);
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(y, i * (w + gap) + x) = row[i].at(y, x);
  return out;
}

}  // namespace ctinterp
