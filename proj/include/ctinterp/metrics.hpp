// SPDX-License-Identifier: Apache-2.0
//
// Full-reference quality metrics and run-level evaluation reports.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ctinterp/data.hpp"
#include "ctinterp/image.hpp"
#include "ctinterp/model.hpp"
#include "ctinterp/random.hpp"

namespace ctinterp {

using Json = nlohmann::json;

/// Reported in place of infinity when the images are identical.
inline constexpr double kPsnrCap = 100.0;
inline constexpr double kRmseScale8Bit = 255.0;

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

inline double mean_squared_error(const Image& x, const Image& y) {
  require_same_shape(x, y, "mean_squared_error");
  if (x.size() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x.pixels[i]) - y.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

inline double psnr(const Image& x, const Image& y, double max_val = 1.0, double cap = kPsnrCap) {
  if (!(max_val > 0.0)) throw RangeError("psnr: max_val must be positive");
  const double mse = mean_squared_error(x, y);
  if (mse == 0.0) return cap;
  return 10.0 * std::log10(max_val * max_val / mse);
}

inline double rmse(const Image& x, const Image& y, double scale = 1.0) {
  return std::sqrt(mean_squared_error(x, y)) * scale;
}

namespace detail {

inline std::vector<double> gaussian_window() {
  std::vector<double> g(kSsimWindow);
  const int r = kSsimWindow / 2;
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    g[i] = std::exp(-static_cast<double>((i - r) * (i - r)) / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

/// Separable Gaussian filter, valid region only.
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * img[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace detail

/// Mean structural similarity over 11x11 Gaussian windows, dynamic range 1.
inline double ssim(const Image& x, const Image& y) {
  require_same_shape(x, y, "ssim");
  if (x.height < kSsimWindow || x.width < kSsimWindow)
    throw ShapeError("ssim: image smaller than the " + std::to_string(kSsimWindow) + "x" +
                     std::to_string(kSsimWindow) + " window");
  const int h = x.height, w = x.width;
  const std::size_t n = x.size();
  std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = x.pixels[i];
    b[i] = y.pixels[i];
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto g = detail::gaussian_window();
  const auto mu_a = detail::filter_valid(a, h, w, g);
  const auto mu_b = detail::filter_valid(b, h, w, g);
  const auto s_aa = detail::filter_valid(aa, h, w, g);
  const auto s_bb = detail::filter_valid(bb, h, w, g);
  const auto s_ab = detail::filter_valid(ab, h, w, g);
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = s_aa[i] - ma * ma, vb = s_bb[i] - mb * mb, cov = s_ab[i] - ma * mb;
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

// ---- evaluation ----------------------------------------------------------

/// Spearman rank correlation; tied values share their average rank.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("spearman: length mismatch");
  if (a.size() < 2) throw RangeError("spearman needs at least two pairs");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n, mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

struct ImageScore {
  int run = 0;
  std::string subject_id;
  int slice = 0;  ///< index within the source volume
  double alpha = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;
};

struct MetricReport {
  std::string tag;
  std::vector<ImageScore> images;
  int runs = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;
  Json config = nullptr;

  std::size_t count() const { return images.size(); }

  /// Recomputes the aggregates as plain means of the per-image values.
  void aggregate() {
    psnr_db = ssim = rmse = 0.0;
    if (images.empty()) return;
    for (const auto& s : images) {
      psnr_db += s.psnr_db;
      ssim += s.ssim;
      rmse += s.rmse;
    }
    const double n = static_cast<double>(images.size());
    psnr_db /= n;
    ssim /= n;
    rmse /= n;
  }

  Json summary_json() const {
    Json j = {{"type", "summary"}, {"tag", tag},   {"count", count()}, {"runs", runs},
              {"psnr_db", psnr_db}, {"ssim", ssim}, {"rmse", rmse}};
    if (!config.is_null()) j["config"] = config;
    return j;
  }

  /// One record per scored image followed by the summary record.
  std::string to_jsonl() const {
    std::string out;
    for (const auto& s : images) {
      Json j = {{"type", "image"}, {"tag", tag},       {"run", s.run},         {"subject_id", s.subject_id},
                {"slice", s.slice}, {"alpha", s.alpha}, {"psnr_db", s.psnr_db}, {"ssim", s.ssim},
                {"rmse", s.rmse}};
      out += j.dump() + "\n";
    }
    out += summary_json().dump() + "\n";
    return out;
  }
};

/// Aligned text table, one row per report: Method | PSNR/SSIM | RMSE.
inline std::string format_table(std::span<const MetricReport> reports) {
  std::size_t wtag = 6;
  for (const auto& r : reports) wtag = std::max(wtag, r.tag.size());
  std::ostringstream os;
  char buf[128];
  auto row = [&](const std::string& a, const std::string& b, const std::string& c) {
    std::snprintf(buf, sizeof buf, "%-*s  %-16s  %8s\n", static_cast<int>(wtag), a.c_str(), b.c_str(), c.c_str());
    os << buf;
  };
  row("Method", "PSNR/SSIM", "RMSE");
  row(std::string(wtag, '-'), std::string(16, '-'), std::string(8, '-'));
  for (const auto& r : reports) {
    char ps[64], rm[32];
    std::snprintf(ps, sizeof ps, "%.3f/%.3f", r.psnr_db, r.ssim);
    std::snprintf(rm, sizeof rm, "%.3f", r.rmse);
    row(r.tag, ps, rm);
  }
  return os.str();
}

/// Produces the interior slices of a run from its endpoints (or, for the
/// oracle, from anything it likes). One output per alpha.
using RunInterpolator = std::function<std::vector<Image>(const RunSample& run, std::span<const double> alphas)>;

inline RunInterpolator blend_interpolator() {
  return [](const RunSample& run, std::span<const double> alphas) {
    const Image& a = run.slices.front();
    const Image& b = run.slices.back();
    std::vector<Image> out;
    for (double alpha : alphas) {
      const double wa = mix_weight_first(alpha);
      Image m(a.height, a.width);
      for (std::size_t i = 0; i < m.size(); ++i)
        m.pixels[i] = static_cast<float>(wa * a.pixels[i] + (1.0 - wa) * b.pixels[i]);
      out.push_back(std::move(m));
    }
    return out;
  };
}

/// Returns the ground truth; scores the metric fixed points.
inline RunInterpolator oracle_interpolator() {
  return [](const RunSample& run, std::span<const double> alphas) {
    const int n = static_cast<int>(run.slices.size());
    std::vector<Image> out;
    for (double alpha : alphas) {
      const double pos = (1.0 - alpha) * (n - 1);
      out.push_back(run.slices[static_cast<std::size_t>(std::lround(pos))]);
    }
    return out;
  };
}

inline RunInterpolator model_interpolator(const ModelState<float>& s) {
  return [&s](const RunSample& run, std::span<const double> alphas) {
    return interpolate_between(s, run.slices.front(), run.slices.back(), alphas);
  };
}

struct EvalOptions {
  int n_gap = 7;
  int count = 100;
  std::uint64_t seed = 0;
  /// Score only the central interior slice (n_gap must be odd).
  bool midpoint_only = false;
  double max_val = 1.0;
  double rmse_scale = kRmseScale8Bit;
};

/// Samples `count` runs, interpolates their interiors and scores every
/// interior slice. The same options and seed draw the same runs, so reports
/// for different interpolators are paired.
inline MetricReport evaluate(const RunInterpolator& interp, std::span<const SliceVolume> test, const EvalOptions& opt,
                             std::string tag = "model") {
  if (opt.n_gap < 3) throw RangeError("n_gap must be >= 3");
  if (opt.count < 0) throw RangeError("count must be >= 0");
  if (opt.midpoint_only && opt.n_gap % 2 == 0) throw RangeError("midpoint scoring needs an odd n_gap");
  MetricReport rep;
  rep.tag = std::move(tag);
  if (opt.count == 0) return rep;
  if (count_windows(test, opt.n_gap) == 0)
    throw DataError("no test volume has " + std::to_string(opt.n_gap) + " consecutive slices");
  Rng rng(opt.seed);
  std::vector<double> alphas = run_alphas(opt.n_gap);
  std::vector<int> positions;
  for (int i = 1; i <= opt.n_gap - 2; ++i) positions.push_back(i);
  if (opt.midpoint_only) {
    alphas = {0.5};
    positions = {(opt.n_gap - 1) / 2};
  }
  for (int r = 0; r < opt.count; ++r) {
    const RunSample run = sample_consecutive_run(test, opt.n_gap, rng);
    const auto out = interp(run, alphas);
    if (out.size() != alphas.size()) throw ShapeError("interpolator returned the wrong number of slices");
    for (std::size_t i = 0; i < out.size(); ++i) {
      const Image& truth = run.slices[positions[i]];
      ImageScore s;
      s.run = r;
      s.subject_id = run.subject_id;
      s.slice = run.start + positions[i];
      s.alpha = alphas[i];
      s.psnr_db = psnr(out[i], truth, opt.max_val);
      s.ssim = ssim(out[i], truth);
      s.rmse = rmse(out[i], truth, opt.rmse_scale);
      rep.images.push_back(std::move(s));
    }
    ++rep.runs;
  }
  rep.aggregate();
  return rep;
}

inline MetricReport evaluate_model(const ModelState<float>& s, std::span<const SliceVolume> test,
                                   const EvalOptions& opt) {
  return evaluate(model_interpolator(s), test, opt, "model");
}

}  // namespace ctinterp
