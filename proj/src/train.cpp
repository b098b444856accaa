// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "ivt/checkpoint.hpp"
#include "ivt/pose.hpp"

namespace ivt::train {

void TrainConfig::validate() const {
  if (steps == 0) throw ConfigError("steps must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip norm must be >= 0");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  for (double m : milestones)
    if (!(m > 0.0 && m < 1.0)) throw ConfigError("milestones must lie in (0, 1)");
}

double TrainConfig::lr_at(std::size_t step) const {
  double rate = lr;
  for (double m : milestones)
    if (static_cast<double>(step) >= m * static_cast<double>(steps)) rate *= 0.1;
  return rate;
}

Adam::Adam(const ParamStore& store, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& e : store.entries()) {
    m_.emplace_back(e.tensor.size(), 0.0);
    v_.emplace_back(e.tensor.size(), 0.0);
  }
}

void Adam::step(ParamStore& store, double lr, double grad_scale) {
  if (store.size() != m_.size()) throw ContractError("optimizer was built for another store");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < store.size(); ++p) {
    Tensor& param = store.entries()[p].tensor;
    const auto g = param.grad();
    auto w = param.mutable_data();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i] * grad_scale;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

double gradient_norm(const ParamStore& store) {
  double s = 0.0;
  for (const auto& e : store.entries())
    for (double g : e.tensor.grad()) s += g * g;
  return std::sqrt(s);
}

TrainingAborted::TrainingAborted(std::size_t step, std::string checkpoint)
    : NumericError("non-finite loss at step " + std::to_string(step) +
                   (checkpoint.empty() ? std::string()
                                       : "; last good parameters in " + checkpoint)),
      step_(step),
      checkpoint_(std::move(checkpoint)) {}

loss::Maps scene_targets(const synth::Scene& scene) {
  return {synth::stack_heatmaps(scene), synth::stack_offsets3d(scene),
          synth::stack_offsets2d(scene)};
}

loss::CenterMask scene_mask(const synth::Scene& scene) {
  loss::CenterMask mask;
  for (std::size_t t = 0; t < scene.targets.size(); ++t)
    for (std::size_t c : scene.targets[t].centers) mask.emplace_back(t, c);
  return mask;
}

namespace {

loss::LossTerms forward_loss(const model::Model& model, const synth::Scene& scene,
                             const loss::Maps& targets, const loss::CenterMask& mask,
                             const TrainConfig& cfg) {
  const auto out =
      model.forward(scene.features, scene.flow, cfg.teacher_forcing ? &targets.offsets2d : nullptr);
  return loss::total_loss(out, targets, mask, {cfg.alpha});
}

bool finite(const loss::LossTerms& l) { return std::isfinite(l.total.item()); }

}  // namespace

loss::LossTerms evaluate_loss(const model::Model& model, const synth::Scene& scene,
                              const TrainConfig& cfg) {
  return forward_loss(model, scene, scene_targets(scene), scene_mask(scene), cfg);
}

std::vector<StepLog> train(model::Model& model, const synth::Scene& scene, const TrainConfig& cfg,
                           const TrainOptions& options) {
  cfg.validate();
  const auto targets = scene_targets(scene);
  const auto mask = scene_mask(scene);
  Adam adam(model.params());
  std::vector<StepLog> history;
  std::vector<NamedTensor> last_good;

  const auto abort = [&](std::size_t step) {
    std::string path;
    if (!options.out_dir.empty() && !last_good.empty()) {
      std::filesystem::create_directories(options.out_dir);
      path = (options.out_dir / "last_good.ivtc").string();
      ParamStore snapshot;
      for (const auto& e : last_good)
        snapshot.add(e.name, e.tensor.shape(),
                     std::vector<double>(e.tensor.data().begin(), e.tensor.data().end()));
      save_checkpoint(path, snapshot);
    }
    throw TrainingAborted(step, path);
  };

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto terms = forward_loss(model, scene, targets, mask, cfg);
    if (!finite(terms)) abort(step);
    backward(terms.total);
    const double norm = gradient_norm(model.params());
    if (!std::isfinite(norm)) abort(step);

    last_good.clear();
    for (const auto& e : model.params().entries()) last_good.push_back({e.name, e.tensor.clone()});

    StepLog row;
    row.step = step;
    row.lr = cfg.lr_at(step);
    row.l1_3d = terms.l1_3d;
    row.l1_2d = terms.l1_2d;
    row.l2_hm = terms.l2_hm;
    row.total = terms.total.item();
    const double clip = cfg.clip_norm > 0.0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
    adam.step(model.params(), row.lr, clip);
    history.push_back(row);
    if (options.on_step) options.on_step(row);
  }
  return history;
}

void write_log_header(std::ostream& os) { os << "step,lr,l1_3d,l1_2d,l2_hm,total\n"; }

void write_log_row(std::ostream& os, const StepLog& r) {
  using pose::format_double;
  os << r.step << ',' << format_double(r.lr) << ',' << format_double(r.l1_3d) << ','
     << format_double(r.l1_2d) << ',' << format_double(r.l2_hm) << ',' << format_double(r.total)
     << '\n';
}

Evaluation evaluate(const model::Model& model, const synth::Scene& scene, const EvalConfig& cfg) {
  const auto& spec = scene.spec;
  const std::size_t hw = spec.height * spec.width, j = spec.joints;
  loss::Maps maps;
  if (cfg.oracle_splice) {
    maps = scene_targets(scene);
  } else {
    const Tensor offsets = synth::stack_offsets2d(scene);
    maps = model.forward(scene.features, scene.flow, cfg.teacher_forcing ? &offsets : nullptr);
  }
  Evaluation ev;
  const auto hm = maps.heatmap.data(), off = maps.offsets3d.data();
  for (std::size_t t = 0; t < spec.frames; ++t)
    ev.decoded.push_back(pose::decode_poses(hm.subspan(t * hw, hw),
                                            off.subspan(t * 3 * j * hw, 3 * j * hw), j,
                                            spec.height, spec.width, cfg.threshold,
                                            cfg.max_people));
  ev.report = metrics::match_and_evaluate(ev.decoded, scene.poses, cfg.metrics);
  return ev;
}

}  // namespace ivt::train
