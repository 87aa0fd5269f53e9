// SPDX-License-Identifier: Apache-2.0
//
// Run configuration files. Every field is optional; missing fields take the
// documented default and unknown keys are rejected. The effective config
// (defaults filled in) is what gets echoed into checkpoints and reports.

#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ctinterp/data.hpp"
#include "ctinterp/io.hpp"
#include "ctinterp/losses.hpp"
#include "ctinterp/model.hpp"
#include "ctinterp/trainer.hpp"

namespace ctinterp {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PhantomSource {
  int count = 10;
  std::uint64_t base_seed = 1000;
  PhantomParams params;
};

struct DataConfig {
  std::vector<std::string> train_manifests;
  std::vector<std::string> test_manifests;
  /// Used when no train manifests are given.
  std::optional<PhantomSource> phantom;
  double split_ratio = 0.9;
  std::uint64_t split_seed = 0;
  /// Bilinear resize of loaded slices to size x size; off when unset.
  std::optional<int> resize_to;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::string output_dir = "run";
};

inline Json to_json(const ModelConfig& m) {
  return {{"input_size", m.input_size},         {"trunk_channels", m.trunk_channels},
          {"pyramid_channels", m.pyramid_channels}, {"d2_base_channels", m.d2_base_channels},
          {"d2_downsamples", m.d2_downsamples}, {"init", to_string(m.init)},
          {"init_std", m.init_std},
          {"seed", m.seed}};
}

inline ModelConfig model_config_from_json(const Json& j) {
  require_known_keys(j, {"input_size", "trunk_channels", "pyramid_channels", "d2_base_channels", "d2_downsamples",
                         "init", "init_std", "seed"},
                     "model");
  ModelConfig m;
  m.input_size = j.value("input_size", m.input_size);
  m.trunk_channels = j.value("trunk_channels", m.trunk_channels);
  m.pyramid_channels = j.value("pyramid_channels", m.pyramid_channels);
  m.d2_base_channels = j.value("d2_base_channels", m.d2_base_channels);
  m.d2_downsamples = j.value("d2_downsamples", m.d2_downsamples);
  if (j.contains("init")) m.init = parse_init_scheme(j.at("init").get<std::string>());
  m.init_std = j.value("init_std", m.init_std);
  m.seed = j.value("seed", m.seed);
  return m;
}

/// `input_size` resolves the default beta.
inline Json to_json(const TrainConfig& t, int input_size) {
  return {{"stage1_iters", t.stage1_iters},
          {"stage2_iters", t.stage2_iters},
          {"lr", t.lr},
          {"lambda", t.lambda},
          {"beta", t.effective_beta(input_size)},
          {"gamma", t.gamma},
          {"n", t.n},
          {"batch_size", t.batch_size},
          {"alternation", {t.step1_count, t.step2_count}},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},
          {"content_variant", to_string(t.content_variant)},
          {"deterministic", t.deterministic},
          {"critics_in_step2", t.critics_in_step2},
          {"checkpoint_every", t.checkpoint_every}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  require_known_keys(j, {"stage1_iters", "stage2_iters", "lr", "lambda", "beta", "gamma", "n", "batch_size",
                         "alternation", "adam_beta1", "adam_beta2", "adam_eps", "content_variant",
                         "deterministic", "critics_in_step2", "checkpoint_every"},
                     "train");
  TrainConfig t;
  t.stage1_iters = j.value("stage1_iters", t.stage1_iters);
  t.stage2_iters = j.value("stage2_iters", t.stage2_iters);
  t.lr = j.value("lr", t.lr);
  t.lambda = j.value("lambda", t.lambda);
  if (j.contains("beta") && !j.at("beta").is_null()) t.beta = j.at("beta").get<double>();
  t.gamma = j.value("gamma", t.gamma);
  t.n = j.value("n", t.n);
  t.batch_size = j.value("batch_size", t.batch_size);
  if (j.contains("alternation")) {
    const auto alt = j.at("alternation").get<std::vector<int>>();
    if (alt.size() != 2) throw ConfigError("train.alternation must be [step1_count, step2_count]");
    t.step1_count = alt[0];
    t.step2_count = alt[1];
  }
  t.adam_beta1 = j.value("adam_beta1", t.adam_beta1);
  t.adam_beta2 = j.value("adam_beta2", t.adam_beta2);
  t.adam_eps = j.value("adam_eps", t.adam_eps);
  if (j.contains("content_variant")) t.content_variant = parse_variant(j.at("content_variant").get<std::string>());
  t.deterministic = j.value("deterministic", t.deterministic);
  t.critics_in_step2 = j.value("critics_in_step2", t.critics_in_step2);
  t.checkpoint_every = j.value("checkpoint_every", t.checkpoint_every);
  return t;
}

inline Json to_json(const DataConfig& d) {
  Json j = {{"train_manifests", d.train_manifests},
            {"test_manifests", d.test_manifests},
            {"split_ratio", d.split_ratio},
            {"split_seed", d.split_seed}};
  if (d.resize_to) j["resize_to"] = *d.resize_to;
  if (d.phantom)
    j["phantom"] = {{"count", d.phantom->count}, {"base_seed", d.phantom->base_seed},
                    {"params", to_json(d.phantom->params)}};
  return j;
}

inline DataConfig data_config_from_json(const Json& j) {
  require_known_keys(j, {"train_manifests", "test_manifests", "phantom", "split_ratio", "split_seed", "resize_to"}, "data");
  DataConfig d;
  d.train_manifests = j.value("train_manifests", d.train_manifests);
  d.test_manifests = j.value("test_manifests", d.test_manifests);
  d.split_ratio = j.value("split_ratio", d.split_ratio);
  d.split_seed = j.value("split_seed", d.split_seed);
  if (j.contains("resize_to") && !j.at("resize_to").is_null()) {
    d.resize_to = j.at("resize_to").get<int>();
    if (*d.resize_to < 1) throw ConfigError("data.resize_to must be positive");
  }
  if (j.contains("phantom")) {
    const Json& p = j.at("phantom");
    require_known_keys(p, {"count", "base_seed", "params"}, "data.phantom");
    PhantomSource src;
    src.count = p.value("count", src.count);
    src.base_seed = p.value("base_seed", src.base_seed);
    if (p.contains("params")) src.params = phantom_params_from_json(p.at("params"));
    d.phantom = src;
  }
  return d;
}

/// Effective configuration, defaults resolved.
inline Json to_json(const RunConfig& c) {
  const ModelConfig m = resolve(c.model);
  return {{"model", to_json(m)},
          {"train", to_json(c.train, m.input_size)},
          {"data", to_json(c.data)},
          {"output", {{"dir", c.output_dir}}}};
}

inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  try {
    require_known_keys(j, {"model", "train", "data", "output"}, "config");
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("data")) c.data = data_config_from_json(j.at("data"));
    if (j.contains("output")) {
      require_known_keys(j.at("output"), {"dir"}, "output");
      c.output_dir = j.at("output").value("dir", c.output_dir);
    }
    c.model = resolve(c.model);
    c.train.validate();
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

/// Train/test volumes named by the config. Explicit test manifests are
/// used as given; otherwise the training pool is split by split_ratio.
inline DatasetSplit load_datasets(const DataConfig& d) {
  std::vector<SliceVolume> pool;
  if (!d.train_manifests.empty()) {
    for (const auto& m : d.train_manifests) pool.push_back(load_volume(m));
  } else if (d.phantom) {
    pool = synth_phantom_corpus(d.phantom->params, d.phantom->count, d.phantom->base_seed);
  } else {
    throw DataError("no training data configured (data.train_manifests or data.phantom)");
  }
  std::vector<SliceVolume> test;
  for (const auto& m : d.test_manifests) test.push_back(load_volume(m));
  if (d.resize_to) {
    for (auto& v : pool) resize_volume(v, *d.resize_to);
    for (auto& v : test) resize_volume(v, *d.resize_to);
  }
  if (test.empty()) return split_dataset(std::move(pool), d.split_ratio, d.split_seed);
  DatasetSplit out;
  out.train = std::move(pool);
  out.test = std::move(test);
  out.ratio = d.split_ratio;
  double tr = 0, te = 0;
  for (const auto& v : out.train) tr += v.size();
  for (const auto& v : out.test) te += v.size();
  out.realized_ratio = tr / (tr + te);
  out.ratio_within_tolerance = std::abs(out.realized_ratio - out.ratio) <= 0.02;
  return out;
}

inline RunConfig load_run_config(const fs::path& path) {
  Json j;
  try {
    j = read_json_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j);
}

}  // namespace ctinterp
