// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion. The convergence fixture
// is recorded once with --record-fixture and compared against afterwards.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "codec_scenes.hpp"
#include "ivt/config.hpp"
#include "ivt/gradcheck.hpp"
#include "ivt/metrics.hpp"
#include "ivt/model.hpp"
#include "ivt/nn.hpp"
#include "ivt/pose.hpp"
#include "ivt/train.hpp"
#include "ivt/video.hpp"
#include "oracles.hpp"
#include "run_manifest.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace ivt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  /// Everything a rerun must reproduce exactly.
  std::string digest;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// ---- 1: gradient suite ----------------------------------------------------------

Outcome gradient_suite() {
  constexpr std::size_t kInstances = 20;
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  double worst = 0.0;
  std::string worst_unit;
  std::size_t probes = 0;
  for (const auto& unit : gradcheck::unit_names())
    for (std::size_t i = 0; i < kInstances; ++i) {
      const auto r = gradcheck::check_unit(unit, 1000 + i, 1e-6, 0);
      probes += r.probes;
      o.digest += unit + ' ' + hex(r.max_relative_error) + '\n';
      if (r.max_relative_error >= worst) {
        worst = r.max_relative_error;
        worst_unit = unit;
      }
    }
  const double secs = seconds_since(start);
  o.pass = worst <= 1e-5 && secs < 300.0;
  o.detail = std::to_string(gradcheck::unit_names().size()) + " units x " +
             std::to_string(kInstances) + " instances, " + std::to_string(probes) +
             " probes, max rel err " + fmt(worst) + " (" + worst_unit + "), " + fmt(secs) + " s";
  return o;
}

// ---- 2: attention algebra -------------------------------------------------------

Outcome attention_algebra() {
  constexpr int kCases = 250;
  Rng rng(2);
  std::size_t failures = 0;
  double worst_sum = 0.0, worst_heads = 0.0;
  for (int c = 0; c < kCases; ++c) {
    const std::size_t heads = std::size_t{1} << rng.below(3);
    const std::size_t d = heads * (1 + rng.below(4));
    const std::size_t n = 1 + rng.below(8);
    bool ok = true;

    const auto logits = testing::random_tensor({n, 1 + rng.below(12)}, rng, false, -30, 30);
    const auto p = softmax_rows(logits);
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < p.dim(1); ++k) s += p.at({r, k});
      worst_sum = std::max(worst_sum, std::fabs(s - 1.0));
      ok &= std::fabs(s - 1.0) <= 1e-12;
    }

    const auto q = testing::random_tensor({n, d}, rng), k1 = testing::random_tensor({1, d}, rng),
               v1 = testing::random_tensor({1, d}, rng);
    const auto single = nn::attention(q, k1, v1);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < d; ++i) ok &= single.at({r, i}) == v1.at({0, i});

    ParamStore store;
    const nn::AttentionConfig cfg{d, heads};
    const auto block = nn::make_block(store, "b", cfg, rng, 2);
    testing::randomize(store, rng);
    const auto x = testing::random_tensor({n, d}, rng, false, -2, 2);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    const auto a = gather(nn::multi_head_self_attention(x, block, cfg), perm, 0);
    const auto b = nn::multi_head_self_attention(gather(x, perm, 0), block, cfg);
    ok &= testing::bitwise_equal(a.data(), b.data());

    const nn::AttentionConfig one{d, 1};
    const auto mh = nn::multi_head_self_attention(x, block, one);
    const auto direct = block.out(nn::attention(block.q(x), block.k(x), block.v(x)));
    const double diff = oracle::max_abs_diff(mh.data(), oracle::values(direct));
    worst_heads = std::max(worst_heads, diff);
    ok &= diff <= 1e-12;

    failures += !ok;
  }
  Outcome o;
  o.pass = failures == 0;
  o.detail = std::to_string(kCases) + " cases, " + std::to_string(failures) +
             " failing, max |row sum - 1| " + fmt(worst_sum) + ", heads=1 max diff " +
             fmt(worst_heads);
  return o;
}

// ---- 3: residual wiring ---------------------------------------------------------

Outcome residual_wiring() {
  constexpr int kCases = 20;
  Rng rng(3);
  std::size_t failures = 0;
  for (int c = 0; c < kCases; ++c) {
    const std::size_t block = 1 + rng.below(2), bh = 1 + rng.below(3), bw = 1 + rng.below(3);
    const std::size_t frames = 1 + rng.below(4), heads = 1 + rng.below(2);
    const std::size_t d = heads * (1 + rng.below(4)), n = bh * bw;
    ParamStore store;
    auto lp = video::make_layer(store, "layer", n, block, {d, heads}, rng, rng.below(2) == 1);
    testing::randomize(store, rng);
    nn::zero_block_outputs(lp.spatial.block);
    nn::zero_block_outputs(lp.temporal.block);
    for (auto& v : lp.spatial.pos.mutable_data()) v = 0.0;
    const video::TokenSequence seq{frames, testing::random_tensor({frames * n, d}, rng, false, -3, 3)};
    const auto out =
        video::ivt_layer(seq, video::FlowField::zero(frames, bh * block, bw * block), lp);
    bool ok = out.tokens.shape() == seq.tokens.shape();
    for (std::size_t i = 0; ok && i < seq.tokens.size(); ++i)
      ok = out.tokens.data()[i] == 2.0 * seq.tokens.data()[i];
    failures += !ok;
  }
  Outcome o;
  o.pass = failures == 0;
  o.detail = std::to_string(kCases) + " zeroed layers, " + std::to_string(failures) +
             " not exactly doubling their input";
  return o;
}

// ---- 4: codec round trip --------------------------------------------------------

Outcome codec_round_trip() {
  constexpr int kScenes = 60;
  Rng rng(4);
  Outcome o;
  std::size_t failures = 0, people = 0;
  double worst = 0.0;
  for (int s = 0; s < kScenes; ++s) {
    const auto scene = testing::random_codec_scene(rng);
    people += scene.poses.size();
    const auto t = pose::encode_targets(scene.poses, scene.joints, scene.height, scene.width, 2.0);
    const auto decoded =
        pose::decode_poses(t.heatmap, t.offsets3d, scene.joints, scene.height, scene.width, 0.5, 8);
    bool ok = decoded.size() == scene.poses.size();
    for (const auto& gt : scene.poses) {
      double best = 1e300;
      for (const auto& p : decoded) best = std::min(best, oracle::mpjpe(p.joints, gt.joints, false));
      if (!decoded.empty()) worst = std::max(worst, best);
      ok &= best <= 1e-9;
    }
    for (std::size_t i = 0; i < decoded.size(); ++i)
      o.digest += pose::format_pose_line(static_cast<std::size_t>(s), i, decoded[i]) + '\n';

    const auto once = pose::keypoint_nms(t.heatmap, scene.height, scene.width, 3);
    ok &= testing::bitwise_equal(pose::keypoint_nms(once, scene.height, scene.width, 3), once);
    const auto noise = oracle::random_vec(rng, scene.height * scene.width, 0.0, 1.0);
    const auto noisy = pose::keypoint_nms(noise, scene.height, scene.width, 3);
    ok &= testing::bitwise_equal(pose::keypoint_nms(noisy, scene.height, scene.width, 3), noisy);
    failures += !ok;
  }
  o.pass = failures == 0;
  o.detail = std::to_string(kScenes) + " scenes, " + std::to_string(people) + " people, " +
             std::to_string(failures) + " failing, worst MPJPE " + fmt(worst) +
             ", NMS idempotent on encoded and random maps";
  return o;
}

// ---- 5: metrics ---------------------------------------------------------------

pose::Pose3D random_pose(Rng& rng, std::size_t joints) {
  pose::Pose3D p;
  for (std::size_t j = 0; j < joints; ++j)
    p.joints.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  return p;
}

pose::Pose3D transform(const pose::Pose3D& p, const oracle::Mat3& r, double s,
                       const std::array<double, 3>& t) {
  pose::Pose3D out = p;
  for (auto& j : out.joints) {
    std::array<double, 3> o{};
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) o[i] += r[i][k] * j[k];
      o[i] = s * o[i] + t[i];
    }
    j = o;
  }
  return out;
}

Outcome metric_correctness() {
  constexpr int kPairs = 600;
  Rng rng(5);
  double worst_orbit = 0.0, worst_oracle = 0.0, worst_excess = -1e300;
  std::size_t orbit_fail = 0, order_fail = 0, oracle_fail = 0;
  for (int c = 0; c < kPairs; ++c) {
    const std::size_t joints = 3 + rng.below(13);
    const auto gt = random_pose(rng, joints);
    const auto rot = oracle::rotation_zyz(rng.uniform(0, 6.3), rng.uniform(0, 3.1), rng.uniform(0, 6.3));
    const std::array<double, 3> shift{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    const auto copy = transform(gt, rot, rng.uniform(0.2, 5.0), shift);
    const double orbit = metrics::pa_mpjpe(copy, gt).error;
    worst_orbit = std::max(worst_orbit, orbit);
    orbit_fail += orbit > 1e-9;

    // Alternate independent pairs with noisy transformed copies.
    pose::Pose3D pred;
    if (c % 2 == 0) {
      pred = random_pose(rng, joints);
    } else {
      pred = transform(gt, rot, rng.uniform(0.5, 2.0), shift);
      for (auto& j : pred.joints)
        for (double& v : j) v += 0.2 * rng.normal();
    }
    const double pa = metrics::pa_mpjpe(pred, gt).error;
    const double rooted = metrics::mpjpe(pred, gt, true);
    worst_excess = std::max(worst_excess, pa - rooted);
    order_fail += pa > rooted;

    for (bool align : {false, true}) {
      const double diff =
          std::fabs(metrics::mpjpe(pred, gt, align) - oracle::mpjpe(pred.joints, gt.joints, align));
      worst_oracle = std::max(worst_oracle, diff);
      oracle_fail += diff > 1e-12;
    }
  }
  Outcome o;
  o.pass = orbit_fail == 0 && order_fail == 0 && oracle_fail == 0;
  o.detail = std::to_string(kPairs) + " pairs: similarity copies max " + fmt(worst_orbit) + ", " +
             std::to_string(order_fail) + " with pa_mpjpe > mpjpe (max excess " +
             fmt(worst_excess) + "), oracle max diff " + fmt(worst_oracle);
  return o;
}

// ---- 6: temporal cost -----------------------------------------------------------

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

Outcome temporal_cost(const fs::path& config_path, const fs::path& scratch) {
  const auto cfg = config::load_config(config_path);
  const model::Model m(config::model_for_scene(cfg, cfg.scene), cfg.model_seed);
  std::map<std::size_t, std::uint64_t> macs;
  for (std::size_t t : {4, 8}) {
    auto spec = cfg.scene;
    spec.frames = t;
    const auto scene = synth::generate(spec);
    video::reset_temporal_mac_count();
    m.forward(scene.features, scene.flow);
    macs[t] = video::temporal_mac_count();
  }
  const double ratio = static_cast<double>(macs[8]) / static_cast<double>(macs[4]);

  std::ostringstream out, err;
  const int code = cli::run({"bench", "--config", config_path.string(), "--out",
                             (scratch / "bench").string()},
                            out, err);
  const auto rows = split_lines(out.str());
  bool table_ok = code == 0 && rows.size() == 6 && rows[0] == "frames,total_macs,ita_macs,wall_ms";
  const std::vector<std::string> frames{"1", "3", "5", "7", "9"};
  for (std::size_t i = 0; table_ok && i < frames.size(); ++i)
    table_ok = rows[i + 1].rfind(frames[i] + ",", 0) == 0;

  Outcome o;
  o.pass = ratio >= 1.9 && ratio <= 2.1 && table_ok;
  o.detail = "temporal MACs T=8 " + std::to_string(macs[8]) + " / T=4 " + std::to_string(macs[4]) +
             " = " + fmt(ratio) + ", bench " + (table_ok ? "emits" : "does not emit") +
             " the 5-row sweep";
  return o;
}

// ---- 7: convergence fixture -----------------------------------------------------

struct ConvergenceRun {
  double initial = 0.0, final_loss = 0.0, seconds = 0.0;
  std::optional<double> mpjpe_forced, mpjpe_predicted;
  std::string digest;
};

ConvergenceRun convergence_run(const fs::path& config_path) {
  const auto start = std::chrono::steady_clock::now();
  const auto cfg = config::load_config(config_path);
  const auto scene = synth::generate(cfg.scene);
  model::Model m(config::model_for_scene(cfg, scene.spec), cfg.model_seed);
  const auto history = train::train(m, scene, cfg.train);
  ConvergenceRun r;
  r.initial = history.front().total;
  r.final_loss = train::evaluate_loss(m, scene, cfg.train).total.item();
  for (const auto& row : history) r.digest += hex(row.total) + '\n';
  std::ostringstream ckpt;
  write_checkpoint(ckpt, m.params().entries());
  r.digest += cli::git_blob_hash(ckpt.str()) + '\n';
  for (bool forced : {true, false}) {
    auto ecfg = cfg.eval;
    ecfg.teacher_forcing = forced;
    const auto ev = train::evaluate(m, scene, ecfg);
    (forced ? r.mpjpe_forced : r.mpjpe_predicted) = ev.report.mpjpe;
    std::ostringstream csv;
    metrics::write_report_csv(csv, ev.report);
    r.digest += csv.str();
  }
  r.seconds = seconds_since(start);
  return r;
}

std::map<std::string, double> read_fixture(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing fixture " + path.string());
  std::map<std::string, double> out;
  for (std::string line; std::getline(is, line);) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto key = line.substr(0, eq);
    key.erase(key.find_last_not_of(' ') + 1);
    out[key] = std::stod(line.substr(eq + 1));
  }
  return out;
}

bool within(double value, double recorded, double rel) {
  return std::fabs(value - recorded) <= rel * std::fabs(recorded);
}

Outcome convergence(const ConvergenceRun& r, const fs::path& fixture_path) {
  Outcome o;
  o.digest = r.digest;
  const double ratio = r.final_loss / r.initial;
  std::ostringstream d;
  d << "loss " << fmt(r.initial) << " -> " << fmt(r.final_loss) << " (" << fmt(100 * ratio)
    << "%), " << fmt(r.seconds) << " s";
  if (!r.mpjpe_forced || !r.mpjpe_predicted) {
    o.detail = d.str() + ", no person decoded";
    return o;
  }
  const auto fx = read_fixture(fixture_path);
  const double tf = fx.at("mpjpe_teacher_forced"), pr = fx.at("mpjpe_predicted");
  d << ", MPJPE teacher-forced " << fmt(*r.mpjpe_forced) << " (fixture " << fmt(tf)
    << "), predicted " << fmt(*r.mpjpe_predicted) << " (fixture " << fmt(pr) << ")";
  o.detail = d.str();
  o.pass = ratio <= 0.10 && r.seconds < 900.0 && within(*r.mpjpe_forced, tf, 0.05) &&
           within(*r.mpjpe_predicted, pr, 0.05) && within(r.initial, fx.at("initial_loss"), 0.05);
  return o;
}

void record_fixture(const ConvergenceRun& r, const fs::path& path) {
  std::ofstream os(path);
  os << "# First converged run of convergence.ini. Later runs must match within 5%.\n"
     << "initial_loss = " << pose::format_double(r.initial) << '\n'
     << "final_loss = " << pose::format_double(r.final_loss) << '\n'
     << "mpjpe_teacher_forced = " << pose::format_double(r.mpjpe_forced.value_or(NAN)) << '\n'
     << "mpjpe_predicted = " << pose::format_double(r.mpjpe_predicted.value_or(NAN)) << '\n';
}

void report(int id, const std::string& name, const Outcome& o, bool& all) {
  all &= o.pass;
  std::cout << "criterion " << id << ' ' << (o.pass ? "PASS" : "FAIL") << " [" << name << "] "
            << o.detail << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string fixture_dir = IVT_FIXTURE_DIR;
  std::string record;
  std::vector<int> only;
  app.add_option("--fixtures", fixture_dir, "Directory holding convergence.ini/.txt");
  app.add_option("--record-fixture", record, "Run the convergence fixture once and write it here");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path config_path = fs::path(fixture_dir) / "convergence.ini";
  if (!record.empty()) {
    const auto r = convergence_run(config_path);
    record_fixture(r, record);
    std::cout << "recorded " << record << ": loss " << r.initial << " -> " << r.final_loss
              << " in " << r.seconds << " s\n";
    return 0;
  }

  const auto wanted = [&](int id) {
    return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
  };
  const fs::path scratch = fs::temp_directory_path() / "ivt_acceptance";
  fs::create_directories(scratch);
  bool all = true;
  Outcome c1, c4, c7;
  try {
    if (wanted(1) || wanted(8)) c1 = gradient_suite();
    if (wanted(1)) report(1, "gradient suite", c1, all);
    if (wanted(2)) report(2, "attention algebra", attention_algebra(), all);
    if (wanted(3)) report(3, "residual wiring", residual_wiring(), all);
    if (wanted(4) || wanted(8)) c4 = codec_round_trip();
    if (wanted(4)) report(4, "codec round trip", c4, all);
    if (wanted(5)) report(5, "metric correctness", metric_correctness(), all);
    if (wanted(6)) report(6, "temporal cost", temporal_cost(config_path, scratch), all);
    const fs::path fixture = fs::path(fixture_dir) / "convergence.txt";
    if (wanted(7) || wanted(8)) c7 = convergence(convergence_run(config_path), fixture);
    if (wanted(7)) report(7, "convergence fixture", c7, all);
    if (wanted(8)) {
      const auto again1 = gradient_suite();
      const auto again4 = codec_round_trip();
      const auto again7 = convergence(convergence_run(config_path), fixture);
      Outcome o;
      const bool s1 = again1.digest == c1.digest, s4 = again4.digest == c4.digest,
                 s7 = again7.digest == c7.digest;
      o.pass = s1 && s4 && s7;
      o.detail = std::string("reruns of 1/4/7 identical: ") + (s1 ? "yes" : "no") + '/' +
                 (s4 ? "yes" : "no") + '/' + (s7 ? "yes" : "no") +
                 " (gradient errors, decoded poses, loss history, checkpoint hash, reports)";
      report(8, "determinism", o, all);
    }
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    all = false;
  }
  fs::remove_all(scratch);
  std::cout << (all ? "ALL PASS" : "SOME CRITERIA FAILED") << std::endl;
  return all ? 0 : 1;
}
