// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "ivt/checkpoint.hpp"
#include "ivt/config.hpp"
#include "ivt/errors.hpp"
#include "ivt/gradcheck.hpp"
#include "ivt/kernels.hpp"
#include "ivt/pose.hpp"
#include "ivt/train.hpp"
#include "run_manifest.hpp"

namespace ivt::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-5;

struct Options {
  // shared
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  // gradcheck
  std::string unit = "all";
  double eps = 1e-6;
  std::size_t instances = 1;
  std::size_t probes = 24;
  // train / eval
  std::string scene_path;
  std::string checkpoint_path;
  std::optional<double> threshold;
  bool oracle_splice = false;
  // bench
  std::vector<std::size_t> frames{1, 3, 5, 7, 9};
  std::vector<std::size_t> scales;
  std::size_t repeats = 1;
  // scene export
  std::string scene_out;
  std::optional<std::size_t> persons, scene_frames;
  std::optional<double> amplitude;
};

config::RunConfig load_or_default(const Options& o) {
  return o.config_path.empty() ? config::RunConfig{} : config::load_config(o.config_path);
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  return os;
}

int cmd_gradcheck(const Options& o, RunManifest& manifest, std::ostream& out) {
  const auto units = gradcheck::expand_selector(o.unit);
  const std::uint64_t seed = o.seed.value_or(1);
  manifest.set_seed(seed);
  manifest.set_config("unit = " + o.unit + "\neps = " + pose::format_double(o.eps) +
                      "\ninstances = " + std::to_string(o.instances) +
                      "\nprobes = " + std::to_string(o.probes) + "\n");
  bool ok = true;
  for (const auto& unit : units) {
    double worst = 0.0;
    std::size_t probes = 0;
    for (std::size_t i = 0; i < o.instances; ++i) {
      const auto r = gradcheck::check_unit(unit, seed + i, o.eps, o.probes);
      worst = std::max(worst, r.max_relative_error);
      probes += r.probes;
    }
    const bool pass = worst <= kGradTolerance;
    ok &= pass;
    out << unit << " max_rel_err=" << pose::format_double(worst) << " probes=" << probes << ' '
        << (pass ? "PASS" : "FAIL") << '\n';
  }
  return ok ? kExitOk : kExitNumeric;
}

int cmd_train(const Options& o, RunManifest& manifest, std::ostream& out) {
  auto cfg = load_or_default(o);
  if (o.seed) cfg.train.seed = cfg.model_seed = *o.seed;
  const auto scene = synth::load_manifest(o.scene_path);
  manifest.add_input("scene", o.scene_path);
  if (!o.config_path.empty()) manifest.add_input("config", o.config_path);
  manifest.set_config(config::dump_config(cfg));
  manifest.set_seed(cfg.train.seed);

  const fs::path dir = o.out_dir;
  fs::create_directories(dir);
  {
    auto os = open_out(dir / "config.ini");
    os << config::dump_config(cfg);
  }
  manifest.add_artifact("config", dir / "config.ini");

  model::Model model(config::model_for_scene(cfg, scene.spec), cfg.model_seed);
  auto log = open_out(dir / "train_log.csv");
  train::write_log_header(log);
  manifest.add_artifact("log", dir / "train_log.csv");
  train::TrainOptions options;
  options.out_dir = dir;
  options.on_step = [&](const train::StepLog& row) { train::write_log_row(log, row); };
  const auto history = train::train(model, scene, cfg.train, options);
  log.flush();

  save_checkpoint(dir / "model.ivtc", model.params());
  manifest.add_artifact("checkpoint", dir / "model.ivtc");
  out << "trained " << history.size() << " steps: loss " << pose::format_double(history.front().total)
      << " -> " << pose::format_double(history.back().total) << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o, RunManifest& manifest, std::ostream& out) {
  auto cfg = load_or_default(o);
  if (o.threshold) cfg.eval.threshold = *o.threshold;
  if (!(cfg.eval.threshold > 0.0 && cfg.eval.threshold < 1.0))
    throw ConfigError("--threshold must lie in (0, 1)");
  cfg.eval.oracle_splice = o.oracle_splice;
  const auto scene = synth::load_manifest(o.scene_path);
  manifest.add_input("scene", o.scene_path);
  if (!o.config_path.empty()) manifest.add_input("config", o.config_path);
  manifest.set_config(config::dump_config(cfg));

  model::Model model(config::model_for_scene(cfg, scene.spec), cfg.model_seed);
  if (!o.oracle_splice || !o.checkpoint_path.empty()) {
    if (o.checkpoint_path.empty()) throw ConfigError("--checkpoint is required");
    model.params().assign_from(load_checkpoint(o.checkpoint_path));
    manifest.add_input("checkpoint", o.checkpoint_path);
  }
  const auto ev = train::evaluate(model, scene, cfg.eval);

  const fs::path dir = o.out_dir;
  {
    auto os = open_out(dir / "eval.csv");
    metrics::write_report_csv(os, ev.report);
  }
  {
    auto os = open_out(dir / "poses.txt");
    for (std::size_t t = 0; t < ev.decoded.size(); ++t) pose::write_pose_lines(os, t, ev.decoded[t]);
  }
  manifest.add_artifact("report", dir / "eval.csv");
  manifest.add_artifact("poses", dir / "poses.txt");
  metrics::write_report_csv(out, ev.report);
  return kExitOk;
}

int cmd_bench(const Options& o, RunManifest& manifest, std::ostream& out) {
  auto cfg = load_or_default(o);
  if (!o.scales.empty()) cfg.model.scales.blocks = o.scales;
  if (o.repeats == 0) throw ConfigError("--repeats must be at least 1");
  manifest.set_config(config::dump_config(cfg));
  manifest.set_seed(cfg.scene.seed);
  if (!o.config_path.empty()) manifest.add_input("config", o.config_path);

  const auto mcfg = config::model_for_scene(cfg, cfg.scene);
  model::Model model(mcfg, cfg.model_seed);
  std::ostringstream table;
  table << "frames,total_macs,ita_macs,wall_ms\n";
  for (std::size_t t : o.frames) {
    if (t == 0) throw ConfigError("--frames entries must be positive");
    auto spec = cfg.scene;
    spec.frames = t;
    const auto scene = synth::generate(spec);
    double best_ms = 0.0;
    std::uint64_t total = 0, temporal = 0;
    for (std::size_t r = 0; r < o.repeats; ++r) {
      kernels::reset_mac_count();
      video::reset_temporal_mac_count();
      const auto start = std::chrono::steady_clock::now();
      const auto maps = model.forward(scene.features, scene.flow);
      const double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - start)
                            .count();
      best_ms = r == 0 ? ms : std::min(best_ms, ms);
      total = kernels::mac_count();
      temporal = video::temporal_mac_count();
    }
    table << t << ',' << total << ',' << temporal << ',' << pose::format_double(best_ms) << '\n';
  }
  const fs::path dir = o.out_dir;
  {
    auto os = open_out(dir / "bench.csv");
    os << table.str();
  }
  manifest.add_artifact("table", dir / "bench.csv");
  out << table.str();
  return kExitOk;
}

int cmd_scene_export(const Options& o, RunManifest& manifest, std::ostream& out) {
  auto cfg = load_or_default(o);
  auto spec = cfg.scene;
  if (o.seed) spec.seed = *o.seed;
  if (o.persons) spec.persons = *o.persons;
  if (o.scene_frames) spec.frames = *o.scene_frames;
  if (o.amplitude) spec.amplitude = *o.amplitude;
  if (!o.config_path.empty()) manifest.add_input("config", o.config_path);
  manifest.set_seed(spec.seed);
  const auto scene = synth::generate(spec);
  if (o.scene_out.empty()) throw ConfigError("--out is required");
  fs::path path = o.scene_out;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  synth::save_manifest(path, scene);
  std::ostringstream snapshot;
  synth::write_manifest(snapshot, scene);
  manifest.set_config(snapshot.str());
  manifest.add_artifact("scene", path);
  out << "wrote " << path.string() << " (" << spec.frames << " frames, " << spec.persons
      << " persons)\n";
  return kExitOk;
}

int cmd_scene_verify(const Options& o, RunManifest& manifest, std::ostream& out) {
  const auto scene = synth::load_manifest(o.scene_path);
  manifest.add_input("scene", o.scene_path);
  manifest.set_seed(scene.spec.seed);
  out << o.scene_path << ": " << scene.spec.frames << " frames, " << scene.spec.persons
      << " persons, " << scene.spec.height << "x" << scene.spec.width << " grid, ok\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Instance-guided video transformer toolkit", "ivt"};
  app.require_subcommand(1);
  const auto seed_opt = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& v) { o.seed = v; },
                                            "Random seed");
  };

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad->add_option("--unit", o.unit, "Unit, nn-blocks or all");
  grad->add_option("--eps", o.eps, "Central-difference step")->check(CLI::Range(1e-7, 1e-4));
  grad->add_option("--instances", o.instances, "Random instances per unit")
      ->check(CLI::PositiveNumber);
  grad->add_option("--probes", o.probes, "Components probed per tensor (0 = all)");
  grad->add_option("--out", o.out_dir, "Directory for the run manifest");
  seed_opt(grad);

  auto* tr = app.add_subcommand("train", "Train on a synthetic scene");
  tr->add_option("--scene", o.scene_path, "Scene manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--config", o.config_path, "Run configuration")->check(CLI::ExistingFile);
  tr->add_option("--out", o.out_dir, "Output directory")->required();
  seed_opt(tr);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a scene");
  ev->add_option("--checkpoint", o.checkpoint_path, "Checkpoint file")->check(CLI::ExistingFile);
  ev->add_option("--scene", o.scene_path, "Scene manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--config", o.config_path, "Run configuration")->check(CLI::ExistingFile);
  ev->add_option("--out", o.out_dir, "Output directory")->required();
  ev->add_option_function<double>("--threshold", [&](const double& v) { o.threshold = v; },
                                  "Heatmap confidence threshold");
  ev->add_flag("--oracle-splice", o.oracle_splice, "Decode ground-truth targets");

  auto* bench = app.add_subcommand("bench", "Multiply-accumulate and timing sweep over T");
  bench->add_option("--frames", o.frames, "Frame counts")->delimiter(',');
  bench->add_option("--scales", o.scales, "Block sizes")->delimiter(',');
  bench->add_option("--repeats", o.repeats, "Timed repetitions per row");
  bench->add_option("--config", o.config_path, "Run configuration")->check(CLI::ExistingFile);
  bench->add_option("--out", o.out_dir, "Output directory");

  auto* scene = app.add_subcommand("scene", "Synthetic scene fixtures");
  scene->require_subcommand(1);
  auto* exp = scene->add_subcommand("export", "Generate a scene and write its manifest");
  exp->add_option("--config", o.config_path, "Run configuration")->check(CLI::ExistingFile);
  exp->add_option("--out", o.scene_out, "Manifest path")->required();
  exp->add_option_function<std::size_t>("--persons", [&](const std::size_t& v) { o.persons = v; });
  exp->add_option_function<std::size_t>("--frames", [&](const std::size_t& v) { o.scene_frames = v; });
  exp->add_option_function<double>("--amplitude", [&](const double& v) { o.amplitude = v; });
  seed_opt(exp);
  auto* ver = scene->add_subcommand("verify", "Regenerate a scene and check its manifest");
  ver->add_option("--scene", o.scene_path, "Scene manifest")->required()->check(CLI::ExistingFile);

  std::vector<std::string> argv_store{"ivt"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  std::string command;
  std::function<int(RunManifest&)> action;
  fs::path manifest_path;
  if (grad->parsed()) {
    command = "gradcheck";
    action = [&](RunManifest& m) { return cmd_gradcheck(o, m, out); };
  } else if (tr->parsed()) {
    command = "train";
    action = [&](RunManifest& m) { return cmd_train(o, m, out); };
  } else if (ev->parsed()) {
    command = "eval";
    action = [&](RunManifest& m) { return cmd_eval(o, m, out); };
  } else if (bench->parsed()) {
    command = "bench";
    action = [&](RunManifest& m) { return cmd_bench(o, m, out); };
  } else if (exp->parsed()) {
    command = "scene-export";
    action = [&](RunManifest& m) { return cmd_scene_export(o, m, out); };
  } else {
    command = "scene-verify";
    action = [&](RunManifest& m) { return cmd_scene_verify(o, m, out); };
  }
  if (exp->parsed())
    manifest_path = o.scene_out + ".manifest.json";
  else if (ver->parsed())
    manifest_path = o.scene_path + ".manifest.json";
  else
    manifest_path = fs::path(o.out_dir) / (command + ".manifest.json");

  kernels::configure_threads_from_env();
  RunManifest manifest(command, args);
  int code = kExitFailure;
  try {
    code = action(manifest);
  } catch (const train::TrainingAborted& e) {
    err << "error: " << e.what() << '\n';
    code = kExitNumeric;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    code = kExitNumeric;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    code = kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    code = kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    code = kExitFailure;
  }
  try {
    manifest.write(manifest_path, code);
  } catch (const std::exception& e) {
    err << "warning: could not write the run manifest: " << e.what() << '\n';
  }
  return code;
}

}  // namespace ivt::cli
