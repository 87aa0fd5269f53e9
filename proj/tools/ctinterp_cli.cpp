// SPDX-License-Identifier: Apache-2.0
//
// ctinterp: phantom generation, training, interpolation, resampling and
// evaluation from the command line.
//
// Exit codes: 0 ok, 1 I/O failure, 2 bad config or arguments, 3 bad or
// insufficient data, 4 numerical collapse during training.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ctinterp/checkpoint.hpp"
#include "ctinterp/config.hpp"
#include "ctinterp/io.hpp"
#include "ctinterp/metrics.hpp"
#include "ctinterp/resample.hpp"
#include "ctinterp/trainer.hpp"

namespace {

using namespace ctinterp;

enum Exit { kOk = 0, kIo = 1, kConfig = 2, kData = 3, kCollapse = 4 };

std::string numbered(const char* stem, long long i, const char* ext, int width = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%0*lld%s", stem, width, i, ext);
  return buf;
}

void require_model_size(const ModelState<float>& s, const Image& im, const std::string& what) {
  const int n = s.config().input_size;
  if (im.height != n || im.width != n)
    throw DataError(what + " is " + std::to_string(im.height) + "x" + std::to_string(im.width) +
                    ", the model expects " + std::to_string(n) + "x" + std::to_string(n));
}

void require_model_size(const ModelState<float>& s, std::span<const SliceVolume> vols) {
  for (const auto& v : vols)
    if (!v.slices.empty()) require_model_size(s, v.slices.front(), "volume " + v.subject_id);
}

/// Refuses to write into a directory that already has content.
void require_fresh_dir(const fs::path& dir) {
  if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir)))
    throw IoError("output directory " + dir.string() + " exists and is not empty");
}

// ---- phantom ----------------------------------------------------------------

struct PhantomArgs {
  std::string params;
  std::string out;
  std::uint64_t seed = 0;
  int count = 1;
  int bit_depth = 16;
};

int cmd_phantom(const PhantomArgs& a) {
  PhantomParams p;
  if (!a.params.empty()) {
    try {
      p = phantom_params_from_json(read_json_file(a.params));
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
  }
  if (a.count < 1) throw ConfigError("--count must be >= 1");
  try {
    detail::validate_phantom(p);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  // Everything is synthesized before the first byte is written.
  std::vector<SliceVolume> vols;
  for (int i = 0; i < a.count; ++i) vols.push_back(synth_phantom(p, a.seed + static_cast<std::uint64_t>(i)));

  const fs::path out(a.out);
  require_fresh_dir(out);
  const fs::path staging = out.string() + ".partial";
  fs::remove_all(staging);
  try {
    if (a.count == 1) {
      write_volume(vols.front(), staging, a.bit_depth);
    } else {
      for (int i = 0; i < a.count; ++i) write_volume(vols[i], staging / numbered("phantom", i, ""), a.bit_depth);
    }
    write_text_file(staging / "phantom_params.json",
                    Json{{"seed", a.seed}, {"count", a.count}, {"params", to_json(p)}}.dump(2) + "\n");
    if (fs::exists(out)) fs::remove(out);
    fs::rename(staging, out);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
  std::cout << "wrote " << a.count << " phantom volume(s) of " << p.slice_count << " slices to " << out.string()
            << "\n";
  return kOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<bool> deterministic;
  std::string checkpoint;
  std::string out;
  std::string variant;
  std::string stage = "both";
  int log_every = 100;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = load_run_config(a.config);
  if (a.seed) rc.model.seed = *a.seed;
  if (a.deterministic) rc.train.deterministic = *a.deterministic;
  if (!a.variant.empty()) rc.train.content_variant = parse_variant(a.variant);
  if (!a.out.empty()) rc.output_dir = a.out;
  const Json echo = to_json(rc);

  const DatasetSplit data = load_datasets(rc.data);
  ModelState<float> state;
  if (!a.checkpoint.empty()) {
    state = load_checkpoint<float>(a.checkpoint);
    if (!(state.config() == rc.model))
      throw ConfigError("checkpoint model config differs from the run config; refusing to resume");
  } else {
    state = make_state<float>(rc.model);
  }
  require_model_size(state, data.train);

  const bool run1 = a.stage == "1" || a.stage == "both";
  const bool run2 = a.stage == "2" || a.stage == "both";
  if (a.stage == "2" && state.stage != Stage::II)
    throw ConfigError("--stage 2 needs a checkpoint that has finished Stage I");

  const fs::path out(rc.output_dir);
  fs::create_directories(out / "checkpoints");
  write_text_file(out / "config.json", echo.dump(2) + "\n");
  std::ofstream log(out / "train_report.jsonl", std::ios::app);
  if (!log) throw IoError("cannot write " + (out / "train_report.jsonl").string());

  TrainHooks<float> hooks;
  hooks.checkpoint = [&](const ModelState<float>& s, bool diagnostic) {
    const fs::path p =
        out / "checkpoints" / (numbered(diagnostic ? "collapse_iter" : "iter", s.iteration, ".ckpt", 8));
    save_checkpoint(p, s, echo);
    return p.string();
  };
  hooks.on_record = [&](const StepRecord& r) {
    log << r.to_json().dump() << '\n';
    if (a.log_every > 0 && (r.iteration + 1) % a.log_every == 0) {
      std::cerr << "[" << to_string(r.tag) << "] iter " << r.iteration + 1;
      if (r.generator) std::cerr << " content " << r.generator->content << " total " << r.generator->total;
      if (r.d1_loss) std::cerr << " d1 " << *r.d1_loss;
      if (r.d2_loss) std::cerr << " d2 " << *r.d2_loss;
      if (r.supervised_loss) std::cerr << " supervised " << *r.supervised_loss;
      std::cerr << "\n";
    }
  };

  try {
    if (run1 && state.stage == Stage::I) {
      stage1_train(state, std::span<const SliceVolume>(data.train), rc.train, hooks);
      save_checkpoint(out / "stage1.ckpt", state, echo);
    }
    if (run2 && rc.train.stage2_iters > 0) stage2_train(state, std::span<const SliceVolume>(data.train), rc.train, hooks);
  } catch (const TrainingCollapse& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (!e.checkpoint().empty()) std::cerr << "diagnostic checkpoint: " << e.checkpoint() << "\n";
    return kCollapse;
  }
  save_checkpoint(out / "final.ckpt", state, echo);
  std::cout << "trained to iteration " << state.iteration << " (stage " << static_cast<int>(state.stage) << "); "
            << (out / "final.ckpt").string() << "\n";
  return kOk;
}

// ---- interpolate ------------------------------------------------------------

struct InterpolateArgs {
  std::string checkpoint;
  std::string slice_a, slice_b;
  int k = 5;
  std::string out;
  bool grid = false;
  int bit_depth = 16;
};

int cmd_interpolate(const InterpolateArgs& a) {
  if (a.k < 1) throw ConfigError("--k must be >= 1");
  const auto state = load_checkpoint<float>(a.checkpoint);
  const Image ia = read_png(a.slice_a).image;
  const Image ib = read_png(a.slice_b).image;
  require_model_size(state, ia, a.slice_a);
  require_model_size(state, ib, a.slice_b);
  const auto alphas = interpolation_alphas(a.k);
  const auto outs = interpolate_between(state, ia, ib, alphas);

  const fs::path out(a.out);
  fs::create_directories(out);
  Json meta = {{"checkpoint", a.checkpoint}, {"slice_a", a.slice_a}, {"slice_b", a.slice_b}, {"k", a.k}};
  for (int i = 0; i < a.k; ++i) {
    const std::string name = numbered("interp", i + 1, ".png", 2);
    write_png(out / name, outs[i], a.bit_depth);
    meta["outputs"].push_back({{"file", name}, {"alpha", alphas[i]}});
  }
  if (a.grid) {
    std::vector<Image> row{ia};
    row.insert(row.end(), outs.begin(), outs.end());
    row.push_back(ib);
    write_png(out / "grid.png", tile_row(row), 8);
  }
  const auto hdr = read_checkpoint_file(a.checkpoint).header;
  if (hdr.contains("run")) meta["config"] = hdr["run"];
  write_text_file(out / "interpolation.json", meta.dump(2) + "\n");
  std::cout << "wrote " << a.k << " interpolant(s) to " << out.string() << "\n";
  return kOk;
}

// ---- resample ---------------------------------------------------------------

struct ResampleArgs {
  std::string checkpoint;
  std::string manifest;
  double target_mm = 1.0;
  std::string out;
  int bit_depth = 16;
};

int cmd_resample(const ResampleArgs& a) {
  const auto state = load_checkpoint<float>(a.checkpoint);
  const SliceVolume v = load_volume(a.manifest);
  require_model_size(state, std::span<const SliceVolume>(&v, 1));
  try {
    inserted_per_gap(v.slice_thickness_mm, a.target_mm);
  } catch (const RangeError& e) {
    throw ConfigError(e.what());
  }
  const fs::path out(a.out);
  if (fs::weakly_canonical(out) == fs::weakly_canonical(fs::path(a.manifest).parent_path()))
    throw ConfigError("output directory must differ from the source volume directory");
  const SliceVolume r = resample_volume(state, v, a.target_mm);
  write_volume(r, out, a.bit_depth);
  std::cout << "resampled " << v.size() << " -> " << r.size() << " slices at " << r.slice_thickness_mm << " mm; "
            << (out / "manifest.json").string() << "\n";
  return kOk;
}

// ---- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
  std::string checkpoint;
  std::string config;
  std::vector<std::string> manifests;
  int n_gap = 7;
  int count = 100;
  std::uint64_t seed = 0;
  bool midpoint = false;
  bool oracle = false;
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& a) {
  std::vector<SliceVolume> test;
  if (!a.manifests.empty()) {
    for (const auto& m : a.manifests) test.push_back(load_volume(m));
  } else if (!a.config.empty()) {
    test = load_datasets(load_run_config(a.config).data).test;
  } else {
    throw ConfigError("evaluate needs --manifest or --config to locate test data");
  }
  EvalOptions opt;
  opt.n_gap = a.n_gap;
  opt.count = a.count;
  opt.seed = a.seed;
  opt.midpoint_only = a.midpoint;

  std::optional<ModelState<float>> state;
  Json echo = nullptr;
  if (!a.oracle) {
    if (a.checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint (or --oracle)");
    state = load_checkpoint<float>(a.checkpoint);
    require_model_size(*state, test);
    const auto hdr = read_checkpoint_file(a.checkpoint).header;
    echo = hdr.contains("run") ? hdr["run"] : Json{{"model", hdr["model"]}};
  }
  std::vector<MetricReport> reports;
  if (a.oracle) reports.push_back(evaluate(oracle_interpolator(), test, opt, "ground truth (oracle)"));
  else reports.push_back(evaluate(model_interpolator(*state), test, opt, "model"));
  reports.push_back(evaluate(blend_interpolator(), test, opt, "pixel blend"));
  for (auto& r : reports) r.config = echo;

  std::cout << format_table(reports);
  if (!a.out.empty()) {
    const fs::path out(a.out);
    fs::create_directories(out);
    std::string lines;
    for (const auto& r : reports) lines += r.to_jsonl();
    write_text_file(out / "report.jsonl", lines);
    write_text_file(out / "report.txt", format_table(reports));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-pyramid CT slice interpolation"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Synthesize phantom volumes (PNG slices + manifest)");
  phantom->add_option("--config", pa.params, "Phantom parameter JSON (default: built-in parameters)")
      ->check(CLI::ExistingFile);
  phantom->add_option("--out", pa.out, "Output directory (must be new or empty)")->required();
  phantom->add_option("--seed", pa.seed, "Phantom seed; volume i uses seed+i")->capture_default_str();
  phantom->add_option("--count", pa.count, "Number of volumes")->capture_default_str();
  phantom->add_option("--bit-depth", pa.bit_depth, "PNG bit depth")->check(CLI::IsMember({8, 16}))->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Run Stage I and/or Stage II training");
  train->add_option("--config", ta.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", ta.seed, "Override model.seed (initialization and sampling)");
  train->add_flag("--deterministic,!--no-deterministic", ta.deterministic,
                  "Record zero wall time so reports are byte-reproducible (default: from config, true)");
  train->add_option("--checkpoint", ta.checkpoint, "Resume from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--out", ta.out, "Output directory (overrides output.dir)");
  train->add_option("--variant", ta.variant, "Stage II content loss")->check(CLI::IsMember({"mse", "perceptual"}));
  train->add_option("--stage", ta.stage, "Which stage(s) to run")
      ->check(CLI::IsMember({"1", "2", "both"}))
      ->capture_default_str();
  train->add_option("--log-every", ta.log_every, "Progress line cadence on stderr (0 = quiet)")->capture_default_str();

  InterpolateArgs ia;
  auto* interp = app.add_subcommand("interpolate", "Synthesize k slices between two slices");
  interp->add_option("--checkpoint", ia.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  interp->add_option("slice_a", ia.slice_a, "First slice (PNG)")->required()->check(CLI::ExistingFile);
  interp->add_option("slice_b", ia.slice_b, "Second slice (PNG)")->required()->check(CLI::ExistingFile);
  interp->add_option("--k", ia.k, "Number of slices to insert; alphas are (k..1)/(k+1)")->capture_default_str();
  interp->add_option("--out", ia.out, "Output directory")->required();
  interp->add_flag("--grid", ia.grid, "Also write grid.png: first slice, interpolants, second slice");
  interp->add_option("--bit-depth", ia.bit_depth, "PNG bit depth")->check(CLI::IsMember({8, 16}))->capture_default_str();

  ResampleArgs ra;
  auto* resample = app.add_subcommand("resample", "Insert interpolants to reach a thinner slice spacing");
  resample->add_option("--checkpoint", ra.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  resample->add_option("--manifest", ra.manifest, "Source volume manifest")->required()->check(CLI::ExistingFile);
  resample->add_option("--target-mm", ra.target_mm, "Target slice thickness in mm")->capture_default_str();
  resample->add_option("--out", ra.out, "Output directory")->required();
  resample->add_option("--bit-depth", ra.bit_depth, "PNG bit depth")->check(CLI::IsMember({8, 16}))->capture_default_str();

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Score interpolated interiors against ground truth");
  evaluate->add_option("--checkpoint", ea.checkpoint, "Trained checkpoint")->check(CLI::ExistingFile);
  evaluate->add_option("--config", ea.config, "Run config whose test split to use")->check(CLI::ExistingFile);
  evaluate->add_option("--manifest", ea.manifests, "Test volume manifest (repeatable)")->check(CLI::ExistingFile);
  evaluate->add_option("--n-gap", ea.n_gap, "Run length; endpoints are n-gap-1 slices apart")->capture_default_str();
  evaluate->add_option("--count", ea.count, "Number of sampled runs")->capture_default_str();
  evaluate->add_option("--seed", ea.seed, "Run sampling seed")->capture_default_str();
  evaluate->add_flag("--midpoint", ea.midpoint, "Score only the central interior slice");
  evaluate->add_flag("--oracle", ea.oracle, "Debug: return ground truth instead of running a model");
  evaluate->add_option("--out", ea.out, "Directory for report.jsonl and report.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*phantom) return cmd_phantom(pa);
    if (*train) return cmd_train(ta);
    if (*interp) return cmd_interpolate(ia);
    if (*resample) return cmd_resample(ra);
    if (*evaluate) return cmd_evaluate(ea);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kIo;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  }
  return kOk;
}
