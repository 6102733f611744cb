// Copyright 2026 The MPNS Lab Authors
// SPDX-License-Identifier: Apache-2.0

/// @file losses.hpp
/// Objective terms for one minibatch.
///
///   base (decoupling) loss   l_pred + l_dec + sum_m (l_inv[m] + l_spec[m])
///   complement prediction    lbar_pred
///   invariant PNS            lbar_inv[m], l_inv_c[m] = l_inv[m] * lbar_inv[m]
///   specific PNS             lbar_spec[m], l_spec_c[m] = l_spec[m] * lbar_spec[m]
///   adversarial              l_adv
///   total                    base + lbar_pred + l_adv + sum_m (lbar_inv + l_inv_c + lbar_spec + l_spec_c)
///
/// Gradient routing: every complement-branch prediction runs through frozen
/// copies of the predictor heads, so those terms reach only the complement
/// extractor. In a product term the primary factor carries gradient to the
/// extractor and heads, and the complement factor to the complement extractor.

#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mpns/diffcore.hpp"
#include "mpns/errors.hpp"
#include "mpns/model.hpp"

namespace mpns {

/// Multipliers on each term of the total objective. All default to 1.
struct LossWeights {
  double pred = 1.0;
  double dec = 1.0;
  double inv = 1.0;
  double spec = 1.0;
  double bar_pred = 1.0;
  double bar_inv = 1.0;
  double inv_c = 1.0;
  double bar_spec = 1.0;
  double spec_c = 1.0;
  double adv = 1.0;

  void validate() const {
    for (double w : {pred, dec, inv, spec, bar_pred, bar_inv, inv_c, bar_spec, spec_c, adv}) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("LossWeights: weights must be finite and nonnegative");
    }
  }
};

/// Concrete decoupling penalty: alignment of invariant representations across
/// modalities plus orthogonality of invariant vs specific per modality.
struct DecouplingConfig {
  double align_weight = 0.1;
  double orth_weight = 0.1;
};

/// How the monotonicity product is formed.
enum class ProductForm {
  batch_mean,  ///< product of the two batch-mean losses
  per_sample,  ///< batch mean of per-sample products
};

struct LossOptions {
  LossWeights weights;
  DecouplingConfig dec;
  ProductForm product = ProductForm::batch_mean;
  /// Evaluate complement-branch predictions through frozen heads.
  bool freeze_heads_in_complement = true;
  /// Multiplier on the model's grl_lambda (schedules).
  double grl_scale = 1.0;
};

struct LossBreakdown {
  double l_pred = 0.0;
  double l_dec = 0.0;
  std::vector<double> l_inv;
  std::vector<double> l_spec;
  double lbar_pred = 0.0;
  std::vector<double> lbar_inv;
  std::vector<double> lbar_spec;
  std::vector<double> l_inv_c;
  std::vector<double> l_spec_c;
  double l_adv = 0.0;
  double total = 0.0;

  static LossBreakdown zeros(int n_modalities) {
    LossBreakdown b;
    const auto m = static_cast<std::size_t>(n_modalities);
    for (auto* v : {&b.l_inv, &b.l_spec, &b.lbar_inv, &b.lbar_spec, &b.l_inv_c, &b.l_spec_c}) v->assign(m, 0.0);
    return b;
  }

  /// (column name, value) pairs in training-log order.
  std::vector<std::pair<std::string, double>> named() const {
    std::vector<std::pair<std::string, double>> out{{"l_pred", l_pred}, {"l_dec", l_dec}};
    auto per_modality = [&out](const std::string& base, const std::vector<double>& v) {
      for (std::size_t m = 0; m < v.size(); ++m) out.emplace_back(base + "_" + std::to_string(m + 1), v[m]);
    };
    per_modality("l_inv", l_inv);
    per_modality("l_spec", l_spec);
    out.emplace_back("lbar_pred", lbar_pred);
    per_modality("lbar_inv", lbar_inv);
    per_modality("lbar_spec", lbar_spec);
    per_modality("l_inv_c", l_inv_c);
    per_modality("l_spec_c", l_spec_c);
    out.emplace_back("l_adv", l_adv);
    out.emplace_back("total", total);
    return out;
  }
};

/// Weighted sum of a breakdown, in the same term order used to build the
/// differentiable total.
inline double total_loss(const LossBreakdown& t, const LossWeights& w) {
  w.validate();
  double total = w.pred * t.l_pred + w.dec * t.l_dec;
  for (std::size_t m = 0; m < t.l_inv.size(); ++m) total += w.inv * t.l_inv[m] + w.spec * t.l_spec[m];
  total += w.bar_pred * t.lbar_pred + w.adv * t.l_adv;
  for (std::size_t m = 0; m < t.l_inv.size(); ++m) {
    total += w.bar_inv * t.lbar_inv[m] + w.inv_c * t.l_inv_c[m] + w.bar_spec * t.lbar_spec[m] + w.spec_c * t.l_spec_c[m];
  }
  return total;
}

/// One minibatch: a matrix per modality and the class labels.
struct Batch {
  std::vector<Matrix> x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
};

/// Batch-mean cross-entropy together with its per-row values.
struct CeTerm {
  Var rows;
  Var mean;
};

inline CeTerm cross_entropy(Var logits, std::span<const int> labels) {
  Var rows = softmax_cross_entropy_rows(logits, labels);
  return {rows, mean(rows)};
}

struct BaseTerms {
  Var l_pred;
  Var l_dec;
  std::vector<CeTerm> l_inv;
  std::vector<CeTerm> l_spec;
};

/// l_dec on primary representations. Requires equal invariant and specific
/// widths so the per-sample cosine is defined.
inline Var decoupling_penalty(const std::vector<RepVars>& reps, const DecouplingConfig& cfg) {
  if (reps.empty()) throw ValidationError("decoupling_penalty: no representations");
  Tape& tape = reps.front().inv.tape();
  if (reps.front().inv.cols() != reps.front().spec.cols()) {
    throw DimensionError("decoupling_penalty: orthogonality needs equal invariant/specific widths, got " +
                         shape_str(reps.front().inv.value()) + " vs " + shape_str(reps.front().spec.value()));
  }
  Var total = tape.constant(Matrix::Zero(1, 1));
  // 1 - cos(r_inv^a, r_inv^b) per sample, over every modality pair.
  for (std::size_t a = 0; a < reps.size(); ++a) {
    for (std::size_t b = a + 1; b < reps.size(); ++b) {
      Var misalign = mean(add_scalar(negate(row_cosine(reps[a].inv, reps[b].inv)), 1.0));
      total = add(total, scale(misalign, cfg.align_weight));
    }
  }
  for (const RepVars& r : reps) {
    Var c = row_cosine(r.inv, r.spec);
    total = add(total, scale(mean(mul(c, c)), cfg.orth_weight));
  }
  return total;
}

inline BaseTerms base_decoupling_loss(Tape& tape, ModelBundle& bundle, const Batch& batch, const std::vector<RepVars>& reps,
                                      const DecouplingConfig& dec) {
  BaseTerms out;
  out.l_pred = softmax_cross_entropy(predict_joint(tape, bundle, reps), batch.y);
  out.l_dec = decoupling_penalty(reps, dec);
  for (int m = 0; m < bundle.config.n_modalities; ++m) {
    const auto& r = reps[static_cast<std::size_t>(m)];
    out.l_inv.push_back(cross_entropy(predict_invariant(tape, bundle, r.inv, m), batch.y));
    out.l_spec.push_back(cross_entropy(predict_specific(tape, bundle, r.spec, m), batch.y));
  }
  return out;
}

inline void check_complement_labels(std::span<const int> y, std::span<const int> ybar) {
  if (y.size() != ybar.size()) throw DimensionError("complement labels: size mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == ybar[i]) throw ValidationError("complement labels: ybar equals y at row " + std::to_string(i));
  }
}

inline Var complement_prediction_loss(Tape& tape, ModelBundle& bundle, const Batch& batch,
                                      const std::vector<RepVars>& complement_reps, std::span<const int> ybar,
                                      bool frozen_heads = true) {
  check_complement_labels(batch.y, ybar);
  return softmax_cross_entropy(predict_joint(tape, bundle, complement_reps, frozen_heads), ybar);
}

struct PnsTerms {
  std::vector<Var> lbar;       ///< complement loss per modality
  std::vector<Var> constraint; ///< monotonicity product per modality
};

namespace detail {

inline Var monotonicity_product(const CeTerm& primary, const CeTerm& complement, ProductForm form) {
  return form == ProductForm::batch_mean ? mul(primary.mean, complement.mean) : mean(mul(primary.rows, complement.rows));
}

}  // namespace detail

inline PnsTerms invariant_pns_loss(Tape& tape, ModelBundle& bundle, const std::vector<CeTerm>& l_inv,
                                   const std::vector<RepVars>& complement_reps, std::span<const int> ybar, ProductForm form,
                                   bool frozen_heads = true) {
  PnsTerms out;
  for (int m = 0; m < bundle.config.n_modalities; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    CeTerm bar = cross_entropy(predict_invariant(tape, bundle, complement_reps[mi].inv, m, frozen_heads), ybar);
    out.lbar.push_back(bar.mean);
    out.constraint.push_back(detail::monotonicity_product(l_inv[mi], bar, form));
  }
  return out;
}

inline PnsTerms specific_pns_loss(Tape& tape, ModelBundle& bundle, const std::vector<CeTerm>& l_spec,
                                  const std::vector<RepVars>& complement_reps, std::span<const int> ybar, ProductForm form,
                                   bool frozen_heads = true) {
  PnsTerms out;
  for (int m = 0; m < bundle.config.n_modalities; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    CeTerm bar = cross_entropy(predict_specific(tape, bundle, complement_reps[mi].spec, m, frozen_heads), ybar);
    out.lbar.push_back(bar.mean);
    out.constraint.push_back(detail::monotonicity_product(l_spec[mi], bar, form));
  }
  return out;
}

/// Cross-entropy of the discriminator against the true modality index,
/// summed over every specific representation from both extractors.
inline Var adversarial_loss(Tape& tape, ModelBundle& bundle, const std::vector<RepVars>& primary,
                            const std::vector<RepVars>& complement, double grl_lambda) {
  Var total = tape.constant(Matrix::Zero(1, 1));
  for (const auto* reps : {&primary, &complement}) {
    for (std::size_t m = 0; m < reps->size(); ++m) {
      const Var& spec = (*reps)[m].spec;
      const std::vector<int> labels(static_cast<std::size_t>(spec.rows()), static_cast<int>(m));
      total = add(total, softmax_cross_entropy(discriminate_modality(tape, bundle, spec, grl_lambda), labels));
    }
  }
  return total;
}

struct StepLosses {
  Var total;
  LossBreakdown breakdown;
};

/// Forward pass of every term on one batch. Terms with zero weight are
/// evaluated for the breakdown but left out of the differentiable total.
inline StepLosses compute_losses(Tape& tape, ModelBundle& bundle, const Batch& batch, std::span<const int> ybar,
                                 const LossOptions& opt) {
  const LossWeights& w = opt.weights;
  w.validate();
  const int M = bundle.config.n_modalities;
  if (static_cast<int>(batch.x.size()) != M) throw ValidationError("compute_losses: batch has the wrong number of modalities");

  std::vector<RepVars> primary, complement;
  for (int m = 0; m < M; ++m) {
    Var x = tape.constant(batch.x[static_cast<std::size_t>(m)]);
    primary.push_back(extract(tape, bundle, x, m, Branch::primary));
    complement.push_back(extract(tape, bundle, x, m, Branch::complement));
  }

  BaseTerms base = base_decoupling_loss(tape, bundle, batch, primary, opt.dec);
  const bool frozen = opt.freeze_heads_in_complement;
  Var lbar_pred = complement_prediction_loss(tape, bundle, batch, complement, ybar, frozen);
  PnsTerms inv = invariant_pns_loss(tape, bundle, base.l_inv, complement, ybar, opt.product, frozen);
  PnsTerms spec = specific_pns_loss(tape, bundle, base.l_spec, complement, ybar, opt.product, frozen);
  Var l_adv = adversarial_loss(tape, bundle, primary, complement, bundle.config.grl_lambda * opt.grl_scale);

  StepLosses out;
  LossBreakdown& b = out.breakdown;
  b = LossBreakdown::zeros(M);
  b.l_pred = base.l_pred.scalar();
  b.l_dec = base.l_dec.scalar();
  b.lbar_pred = lbar_pred.scalar();
  b.l_adv = l_adv.scalar();
  for (std::size_t m = 0; m < static_cast<std::size_t>(M); ++m) {
    b.l_inv[m] = base.l_inv[m].mean.scalar();
    b.l_spec[m] = base.l_spec[m].mean.scalar();
    b.lbar_inv[m] = inv.lbar[m].scalar();
    b.lbar_spec[m] = spec.lbar[m].scalar();
    b.l_inv_c[m] = inv.constraint[m].scalar();
    b.l_spec_c[m] = spec.constraint[m].scalar();
  }

  std::optional<Var> total;
  auto accumulate = [&total](Var term, double weight) {
    if (weight == 0.0) return;
    Var scaled = weight == 1.0 ? term : scale(term, weight);
    total = total ? add(*total, scaled) : scaled;
  };
  accumulate(base.l_pred, w.pred);
  accumulate(base.l_dec, w.dec);
  for (std::size_t m = 0; m < static_cast<std::size_t>(M); ++m) {
    accumulate(base.l_inv[m].mean, w.inv);
    accumulate(base.l_spec[m].mean, w.spec);
  }
  accumulate(lbar_pred, w.bar_pred);
  accumulate(l_adv, w.adv);
  for (std::size_t m = 0; m < static_cast<std::size_t>(M); ++m) {
    accumulate(inv.lbar[m], w.bar_inv);
    accumulate(inv.constraint[m], w.inv_c);
    accumulate(spec.lbar[m], w.bar_spec);
    accumulate(spec.constraint[m], w.spec_c);
  }
  out.total = total ? *total : tape.constant(Matrix::Zero(1, 1));
  b.total = out.total.scalar();
  return out;
}

}  // namespace mpns
