#include <gtest/gtest.h>

#include <fstream>

#include "ctinterp/config.hpp"

using namespace ctinterp;

namespace {

TEST(RunConfig, DefaultsAndEcho) {
  const RunConfig c = run_config_from_json(Json::object());
  EXPECT_EQ(c.model.input_size, 64);
  EXPECT_EQ(c.train.n, 7);
  EXPECT_DOUBLE_EQ(c.train.lambda, 0.5);
  EXPECT_EQ(c.train.step1_count, 1);
  EXPECT_EQ(c.train.step2_count, 1);
  const Json echo = to_json(c);
  // Resolved beta appears even when unset.
  EXPECT_DOUBLE_EQ(echo["train"]["beta"].get<double>(), 5e-4);
  EXPECT_EQ(echo["model"]["pyramid_channels"], Json({16, 8, 8}));
  // The echo parses back to the same effective config.
  EXPECT_EQ(to_json(run_config_from_json(echo)), echo);
  const Json big = to_json(run_config_from_json(Json{{"model", {{"input_size", 512}}}}));
  EXPECT_DOUBLE_EQ(big["train"]["beta"].get<double>(), 5e-3);
  EXPECT_EQ(big["model"]["pyramid_channels"], Json({16, 8, 4}));
}

TEST(RunConfig, FullRoundTrip) {
  const Json j = {
      {"model", {{"input_size", 64}, {"init", "fan_in"}, {"seed", 3}}},
      {"train",
       {{"stage1_iters", 10}, {"stage2_iters", 20}, {"lr", 3e-4}, {"lambda", 0.1}, {"batch_size", 4},
        {"alternation", {2, 1}}, {"content_variant", "perceptual"}, {"checkpoint_every", 5}}},
      {"data", {{"phantom", {{"count", 4}, {"base_seed", 9}, {"params", {{"image_size", 64}}}}}, {"resize_to", 64}}},
      {"output", {{"dir", "runs/x"}}}};
  const RunConfig c = run_config_from_json(j);
  EXPECT_EQ(c.model.init, InitScheme::FanIn);
  EXPECT_EQ(c.model.pyramid_channels, (std::vector<int>{16, 8, 8}));
  EXPECT_EQ(c.train.step1_count, 2);
  EXPECT_EQ(c.train.content_variant, ContentVariant::Perceptual);
  ASSERT_TRUE(c.data.phantom.has_value());
  EXPECT_EQ(c.data.phantom->count, 4);
  EXPECT_EQ(c.data.resize_to, 64);
  EXPECT_EQ(c.output_dir, "runs/x");
  EXPECT_EQ(to_json(run_config_from_json(to_json(c))), to_json(c));
}

TEST(RunConfig, RejectsBadInput) {
  EXPECT_THROW(run_config_from_json(Json{{"modle", Json::object()}}), ConfigError);
  EXPECT_THROW(run_config_from_json(Json{{"train", {{"learning_rate", 1}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(Json{{"train", {{"lr", "fast"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(Json{{"train", {{"lr", -1.0}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(Json{{"train", {{"alternation", {1}}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(Json{{"train", {{"content_variant", "l1"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(Json{{"model", {{"input_size", 100}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(Json{{"model", {{"init", "xavier"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(Json{{"data", {{"resize_to", 0}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(Json{{"data", {{"phantom", {{"cnt", 2}}}}}}), ConfigError);
}

TEST(RunConfig, LoadFromFile) {
  const fs::path p = fs::temp_directory_path() / "ctinterp_cfg_test.json";
  std::ofstream(p) << R"({"train": {"n": 5}})";
  EXPECT_EQ(load_run_config(p).train.n, 5);
  std::ofstream(p) << "{ broken";
  EXPECT_THROW(load_run_config(p), ConfigError);
  fs::remove(p);
  EXPECT_THROW(load_run_config(p), ConfigError);
}

TEST(RunConfig, ShippedExamplesParse) {
  const fs::path dir = fs::path(CTINTERP_EXAMPLES_DIR) / "configs";
  const RunConfig toy = load_run_config(dir / "toy64.json");
  EXPECT_EQ(toy.model.input_size, 64);
  EXPECT_EQ(toy.data.phantom->count, 100);
  EXPECT_EQ(load_run_config(dir / "ct256.json").train.stage1_iters, 50000);
}

TEST(Datasets, PhantomPoolIsSplitNineToOne) {
  DataConfig d;
  PhantomSource src;
  src.count = 10;
  src.params.image_size = 16;
  src.params.slice_count = 6;
  d.phantom = src;
  const auto s = load_datasets(d);
  EXPECT_EQ(s.train.size(), 9u);
  EXPECT_EQ(s.test.size(), 1u);
  EXPECT_TRUE(s.ratio_within_tolerance);
  d.resize_to = 8;
  EXPECT_EQ(load_datasets(d).train[0].slices[0].height, 8);
  EXPECT_THROW(load_datasets(DataConfig{}), DataError);
}

}  // namespace
