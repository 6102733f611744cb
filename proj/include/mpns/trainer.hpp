// Copyright 2026 The MPNS Lab Authors
// SPDX-License-Identifier: Apache-2.0

/// @file trainer.hpp
/// Joint minibatch optimization of the full objective with ablation modes.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mpns/diffcore.hpp"
#include "mpns/errors.hpp"
#include "mpns/losses.hpp"
#include "mpns/model.hpp"
#include "mpns/rng.hpp"
#include "mpns/synthgen.hpp"

namespace mpns {

enum class AblationMode { full_mpns, wo_pns, wo_inv_pns, wo_spec_pns };

inline const char* to_string(AblationMode m) {
  switch (m) {
    case AblationMode::full_mpns: return "full_mpns";
    case AblationMode::wo_pns: return "wo_pns";
    case AblationMode::wo_inv_pns: return "wo_inv_pns";
    case AblationMode::wo_spec_pns: return "wo_spec_pns";
  }
  return "?";
}

inline AblationMode parse_ablation_mode(const std::string& s) {
  if (s == "full_mpns") return AblationMode::full_mpns;
  if (s == "wo_pns") return AblationMode::wo_pns;
  if (s == "wo_inv_pns") return AblationMode::wo_inv_pns;
  if (s == "wo_spec_pns") return AblationMode::wo_spec_pns;
  throw ValidationError("unknown ablation mode '" + s + "'");
}

enum class GrlSchedule {
  constant,   ///< lambda throughout
  dann_ramp,  ///< lambda * (2 / (1 + exp(-10 p)) - 1), p = training progress in [0, 1]
};

enum class ComplementLabelPolicy {
  per_epoch,  ///< fresh complement labels every epoch
  fixed,      ///< drawn once before the first epoch
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 128;
  AdamConfig adam;
  std::uint64_t seed = 1;
  AblationMode mode = AblationMode::full_mpns;
  /// Base weights before the ablation mode zeroes its terms.
  LossWeights weights;
  DecouplingConfig dec;
  ProductForm product = ProductForm::batch_mean;
  ComplementLabelPolicy complement_labels = ComplementLabelPolicy::per_epoch;
  double divergence_limit = 1e6;
  GrlSchedule grl_schedule = GrlSchedule::constant;
  /// Learning-rate multiplier for the modality discriminator.
  double discriminator_lr_scale = 1.0;
  /// Complement-branch losses see frozen predictor heads.
  bool freeze_heads_in_complement = true;

  void validate() const {
    if (epochs < 1) throw ValidationError("TrainConfig: epochs must be >= 1");
    if (batch_size < 2) throw ValidationError("TrainConfig: batch_size must be >= 2");
    if (!(adam.lr > 0.0)) throw ValidationError("TrainConfig: lr must be positive");
    weights.validate();
  }

  /// Weights after applying the ablation mode.
  LossWeights effective_weights() const {
    LossWeights w = weights;
    switch (mode) {
      case AblationMode::full_mpns: break;
      case AblationMode::wo_pns:
        w.bar_pred = w.bar_inv = w.inv_c = w.bar_spec = w.spec_c = w.adv = 0.0;
        break;
      case AblationMode::wo_inv_pns:
        w.bar_inv = w.inv_c = 0.0;
        break;
      case AblationMode::wo_spec_pns:
        w.bar_spec = w.spec_c = 0.0;
        break;
    }
    return w;
  }

  LossOptions loss_options() const {
    LossOptions o;
    o.weights = effective_weights();
    o.dec = dec;
    o.product = product;
    o.freeze_heads_in_complement = freeze_heads_in_complement;
    return o;
  }
};

struct TrainRecord {
  /// Per-epoch means of every term over that epoch's batches.
  std::vector<LossBreakdown> epochs;
  ModelBundle bundle;
  double wall_seconds = 0.0;
};

inline Batch gather_batch(const Dataset& ds, std::span<const std::size_t> rows) {
  Batch b;
  for (const Matrix& x : ds.x) {
    Matrix part(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) part.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    b.x.push_back(std::move(part));
  }
  for (std::size_t r : rows) b.y.push_back(ds.y[r]);
  return b;
}

namespace detail {

inline void accumulate_breakdown(LossBreakdown& acc, const LossBreakdown& b) {
  acc.l_pred += b.l_pred;
  acc.l_dec += b.l_dec;
  acc.lbar_pred += b.lbar_pred;
  acc.l_adv += b.l_adv;
  acc.total += b.total;
  for (std::size_t m = 0; m < b.l_inv.size(); ++m) {
    acc.l_inv[m] += b.l_inv[m];
    acc.l_spec[m] += b.l_spec[m];
    acc.lbar_inv[m] += b.lbar_inv[m];
    acc.lbar_spec[m] += b.lbar_spec[m];
    acc.l_inv_c[m] += b.l_inv_c[m];
    acc.l_spec_c[m] += b.l_spec_c[m];
  }
}

inline void scale_breakdown(LossBreakdown& acc, double c) {
  acc.l_pred *= c;
  acc.l_dec *= c;
  acc.lbar_pred *= c;
  acc.l_adv *= c;
  acc.total *= c;
  for (auto* v : {&acc.l_inv, &acc.l_spec, &acc.lbar_inv, &acc.lbar_spec, &acc.l_inv_c, &acc.l_spec_c}) {
    for (double& x : *v) x *= c;
  }
}

inline void check_divergence(const LossBreakdown& b, int epoch, double limit) {
  for (const auto& [name, value] : b.named()) {
    if (!std::isfinite(value) || std::abs(value) > limit) throw DivergenceError(name, epoch, value);
  }
}

}  // namespace detail

using EpochCallback = std::function<void(int epoch, const LossBreakdown&)>;

/// Trains a freshly initialized bundle. One backward pass per batch over the
/// weighted total; the gradient-reversal layer supplies the discriminator's
/// min-max inside that single pass. Deterministic given the seeds.
inline TrainRecord train(const ModelConfig& model_cfg, const TrainConfig& cfg, const Dataset& data,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  model_cfg.validate();
  if (data.size() == 0) throw ValidationError("train: empty dataset");
  if (static_cast<int>(data.n_modalities()) != model_cfg.n_modalities) {
    throw DimensionError("train: dataset has " + std::to_string(data.n_modalities()) + " modalities, model expects " +
                         std::to_string(model_cfg.n_modalities));
  }
  for (int m = 0; m < model_cfg.n_modalities; ++m) {
    if (data.x[static_cast<std::size_t>(m)].cols() != model_cfg.input_dims[static_cast<std::size_t>(m)]) {
      throw DimensionError("train: modality " + std::to_string(m + 1) + " width " +
                           std::to_string(data.x[static_cast<std::size_t>(m)].cols()) + " vs model input " +
                           std::to_string(model_cfg.input_dims[static_cast<std::size_t>(m)]));
    }
  }

  const auto start = std::chrono::steady_clock::now();
  TrainRecord record;
  record.bundle = ModelBundle::init(model_cfg, derive_seed(cfg.seed, "model"));
  ModelBundle& bundle = record.bundle;
  std::vector<Parameter*> params = bundle.parameters();
  const std::size_t n_disc = bundle.discriminator.parameters().size();
  Adam optimizer({params.begin(), params.end() - static_cast<std::ptrdiff_t>(n_disc)}, cfg.adam);
  AdamConfig disc_adam = cfg.adam;
  disc_adam.lr *= cfg.discriminator_lr_scale;
  Adam disc_optimizer({params.end() - static_cast<std::ptrdiff_t>(n_disc), params.end()}, disc_adam);
  LossOptions opt = cfg.loss_options();

  Rng shuffle_rng(cfg.seed, "shuffle");
  Rng label_rng(cfg.seed, "complement-labels");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> ybar_all;
  if (cfg.complement_labels == ComplementLabelPolicy::fixed) {
    ybar_all = generate_complement_labels(data.y, model_cfg.n_classes, label_rng);
  }

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (data.size() + bs - 1) / bs;
  const double total_steps = static_cast<double>(steps_per_epoch) * cfg.epochs;
  std::size_t step_index = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    if (cfg.complement_labels == ComplementLabelPolicy::per_epoch) {
      ybar_all = generate_complement_labels(data.y, model_cfg.n_classes, label_rng);
    }
    LossBreakdown acc = LossBreakdown::zeros(model_cfg.n_modalities);
    int batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      const std::size_t count = std::min(bs, order.size() - begin);
      const std::span<const std::size_t> rows(order.data() + begin, count);
      Batch batch = gather_batch(data, rows);
      std::vector<int> ybar;
      ybar.reserve(count);
      for (std::size_t r : rows) ybar.push_back(ybar_all[r]);

      if (cfg.grl_schedule == GrlSchedule::dann_ramp) {
        const double progress = static_cast<double>(step_index) / total_steps;
        opt.grl_scale = 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0;
      }
      ++step_index;
      Tape tape;
      StepLosses step = compute_losses(tape, bundle, batch, ybar, opt);
      detail::check_divergence(step.breakdown, epoch, cfg.divergence_limit);
      optimizer.zero_grad();
      disc_optimizer.zero_grad();
      tape.backward(step.total);
      optimizer.step();
      disc_optimizer.step();
      detail::accumulate_breakdown(acc, step.breakdown);
      ++batches;
    }
    detail::scale_breakdown(acc, 1.0 / batches);
    record.epochs.push_back(acc);
    if (on_epoch) on_epoch(epoch, acc);
  }
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

/// Drops the complement extractor and the discriminator.
inline InferenceBundle inference_model(const TrainRecord& record) { return record.bundle.inference(); }

}  // namespace mpns
