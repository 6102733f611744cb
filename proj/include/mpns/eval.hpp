// Copyright 2026 The MPNS Lab Authors
// SPDX-License-Identifier: Apache-2.0

/// @file eval.hpp
/// Distance correlation against ground-truth latents, predictive accuracy
/// with missing modalities, and a held-out modality probe.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mpns/diffcore.hpp"
#include "mpns/errors.hpp"
#include "mpns/model.hpp"
#include "mpns/rng.hpp"
#include "mpns/synthgen.hpp"

namespace mpns {

/// Sample distance correlation of x [n x p] against each of ys [n x q_k].
///
/// One pass over row pairs, O(n) memory. With a_ij, b_ij the pairwise
/// Euclidean distances, the double-centered inner product expands to
///   dCov^2 = mean(a . b) - (2/n) sum_i abar_i bbar_i + abar bbar,
/// where abar_i are row means and abar the grand mean; the same expansion
/// gives both distance variances.
inline std::vector<double> distance_correlation_many(const Matrix& x, const std::vector<Matrix>& ys) {
  const Eigen::Index n = x.rows();
  if (n < 2) throw ValidationError("distance_correlation: need at least 2 samples");
  for (const Matrix& y : ys) {
    if (y.rows() != n) throw DimensionError("distance_correlation: sample counts differ, " + shape_str(x) + " vs " + shape_str(y));
  }
  const std::size_t k = ys.size();
  const auto nn = static_cast<std::size_t>(n);

  std::vector<double> row_a(nn, 0.0);
  std::vector<std::vector<double>> row_b(k, std::vector<double>(nn, 0.0));
  double s_aa = 0.0;
  std::vector<double> s_ab(k, 0.0), s_bb(k, 0.0);

  Eigen::VectorXd a(n);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    a = (x.rowwise() - x.row(i)).rowwise().norm();
    row_a[static_cast<std::size_t>(i)] = a.sum();
    s_aa += a.squaredNorm();
    for (std::size_t t = 0; t < k; ++t) {
      const Matrix& y = ys[t];
      b = (y.rowwise() - y.row(i)).rowwise().norm();
      row_b[t][static_cast<std::size_t>(i)] = b.sum();
      s_bb[t] += b.squaredNorm();
      s_ab[t] += a.dot(b);
    }
  }

  const double dn = static_cast<double>(n);
  auto centered = [dn](double s_xy, const std::vector<double>& rx, const std::vector<double>& ry) {
    double cross = 0.0, gx = 0.0, gy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
      cross += rx[i] * ry[i];
      gx += rx[i];
      gy += ry[i];
    }
    // rows hold sums, so abar_i = rx/n and abar = gx/n^2.
    return s_xy / (dn * dn) - 2.0 * cross / (dn * dn * dn) + (gx / (dn * dn)) * (gy / (dn * dn));
  };

  const double var_x = centered(s_aa, row_a, row_a);
  if (!(var_x > 0.0)) throw ValidationError("distance_correlation: x is constant across samples");
  std::vector<double> out(k);
  for (std::size_t t = 0; t < k; ++t) {
    const double var_y = centered(s_bb[t], row_b[t], row_b[t]);
    if (!(var_y > 0.0)) throw ValidationError("distance_correlation: y is constant across samples");
    const double cov = std::max(0.0, centered(s_ab[t], row_a, row_b[t]));
    out[t] = std::clamp(std::sqrt(cov / std::sqrt(var_x * var_y)), 0.0, 1.0);
  }
  return out;
}

inline double distance_correlation(const Matrix& x, const Matrix& y) { return distance_correlation_many(x, {y}).front(); }

enum class RepPart { invariant, specific, concatenated };

inline const char* to_string(RepPart p) {
  switch (p) {
    case RepPart::invariant: return "invariant";
    case RepPart::specific: return "specific";
    case RepPart::concatenated: return "concatenated";
  }
  return "?";
}

inline RepPart parse_rep_part(const std::string& s) {
  if (s == "invariant") return RepPart::invariant;
  if (s == "specific") return RepPart::specific;
  if (s == "concatenated") return RepPart::concatenated;
  throw ValidationError("unknown representation part '" + s + "'");
}

struct DcorEntry {
  int modality = 1;      ///< 1-based
  std::string variable;  ///< NS, SF, NC or SC
  RepPart part = RepPart::concatenated;
  double dcor = 0.0;
};

struct DcorReport {
  std::vector<DcorEntry> entries;

  double get(int modality, const std::string& variable, RepPart part) const {
    for (const DcorEntry& e : entries) {
      if (e.modality == modality && e.variable == variable && e.part == part) return e.dcor;
    }
    throw ValidationError("DcorReport: no entry for modality " + std::to_string(modality) + " " + variable);
  }
};

/// dCor of each representation part against each scalar latent. The
/// concatenated part is the headline comparator.
inline DcorReport dcor_report_from_reps(const std::vector<Reps>& reps, const Dataset& eval) {
  std::vector<Matrix> latents;
  for (int v = 0; v < 4; ++v) latents.push_back(eval.latent_column(v));
  DcorReport report;
  for (std::size_t m = 0; m < reps.size(); ++m) {
    const Reps& r = reps[m];
    Matrix concat(r.inv.rows(), r.inv.cols() + r.spec.cols());
    concat << r.inv, r.spec;
    for (RepPart part : {RepPart::invariant, RepPart::specific, RepPart::concatenated}) {
      const Matrix& x = part == RepPart::invariant ? r.inv : part == RepPart::specific ? r.spec : concat;
      const std::vector<double> values = distance_correlation_many(x, latents);
      for (int v = 0; v < 4; ++v) {
        report.entries.push_back({static_cast<int>(m) + 1, kLatentNames[static_cast<std::size_t>(v)], part,
                                  values[static_cast<std::size_t>(v)]});
      }
    }
  }
  return report;
}

template <typename Bundle>
DcorReport evaluate_dcor(const Bundle& bundle, const Dataset& eval) {
  std::vector<Reps> reps;
  for (int m = 0; m < bundle.config.n_modalities; ++m) reps.push_back(extract(bundle, eval.x[static_cast<std::size_t>(m)], m));
  return dcor_report_from_reps(reps, eval);
}

// ---------------------------------------------------------------------------
// Accuracy

enum class EvalMode { full, only_modality_1, only_modality_2 };

inline const char* to_string(EvalMode m) {
  switch (m) {
    case EvalMode::full: return "full";
    case EvalMode::only_modality_1: return "only_modality_1";
    case EvalMode::only_modality_2: return "only_modality_2";
  }
  return "?";
}

enum class Imputation { zero, mean };

struct AccuracyReport {
  EvalMode mode = EvalMode::full;
  /// F_P on all representations (full) or with the absent block imputed.
  double joint = 0.0;
  /// F_I on the available modality; mean over modalities in full mode.
  double invariant = 0.0;
  /// F_M on the available modality; mean over modalities in full mode.
  double specific = 0.0;
};

inline double accuracy_of(const Matrix& logits, std::span<const int> labels) {
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (static_cast<int>(arg) == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

template <typename Bundle>
AccuracyReport evaluate_accuracy(const Bundle& bundle, const Dataset& eval, EvalMode mode,
                                 Imputation imputation = Imputation::zero) {
  const int M = bundle.config.n_modalities;
  std::vector<Reps> reps;
  for (int m = 0; m < M; ++m) reps.push_back(extract(bundle, eval.x[static_cast<std::size_t>(m)], m));

  AccuracyReport r;
  r.mode = mode;
  if (mode == EvalMode::full) {
    r.joint = accuracy_of(predict_joint(bundle, reps), eval.y);
    for (int m = 0; m < M; ++m) {
      const auto& rm = reps[static_cast<std::size_t>(m)];
      r.invariant += accuracy_of(bundle.invariant_head(m).forward(rm.inv), eval.y) / M;
      r.specific += accuracy_of(bundle.specific_heads[static_cast<std::size_t>(m)].forward(rm.spec), eval.y) / M;
    }
    return r;
  }

  const int keep = mode == EvalMode::only_modality_1 ? 0 : 1;
  if (keep >= M) throw ValidationError("evaluate_accuracy: modality " + std::to_string(keep + 1) + " not in model");
  const auto& rk = reps[static_cast<std::size_t>(keep)];
  r.invariant = accuracy_of(bundle.invariant_head(keep).forward(rk.inv), eval.y);
  r.specific = accuracy_of(bundle.specific_heads[static_cast<std::size_t>(keep)].forward(rk.spec), eval.y);
  std::vector<Reps> imputed = reps;
  for (int m = 0; m < M; ++m) {
    if (m == keep) continue;
    Reps& absent = imputed[static_cast<std::size_t>(m)];
    if (imputation == Imputation::zero) {
      absent.inv.setZero();
      absent.spec.setZero();
    } else {
      absent.inv = absent.inv.colwise().mean().replicate(absent.inv.rows(), 1);
      absent.spec = absent.spec.colwise().mean().replicate(absent.spec.rows(), 1);
    }
  }
  r.joint = accuracy_of(predict_joint(bundle, imputed), eval.y);
  return r;
}

// ---------------------------------------------------------------------------
// Modality probe

struct ProbeConfig {
  std::vector<int> hidden{64};
  int epochs = 30;
  int batch_size = 128;
  AdamConfig adam;
  std::uint64_t seed = 7;
};

/// Trains a fresh modality classifier on features (rows) with labels, using
/// the first half of the rows of each class-block for training and the rest
/// for testing. Returns held-out accuracy.
inline double train_modality_probe(const std::vector<Matrix>& features_per_modality, const ProbeConfig& cfg) {
  const int M = static_cast<int>(features_per_modality.size());
  if (M < 2) throw ValidationError("probe: need at least 2 modalities");
  const Eigen::Index n = features_per_modality.front().rows();
  const Eigen::Index width = features_per_modality.front().cols();
  const Eigen::Index half = n / 2;
  if (half < 1 || n - half < 1) throw ValidationError("probe: not enough samples to split");

  Matrix train_x(half * M, width), test_x((n - half) * M, width);
  std::vector<int> train_y, test_y;
  for (int m = 0; m < M; ++m) {
    const Matrix& f = features_per_modality[static_cast<std::size_t>(m)];
    if (f.rows() != n || f.cols() != width) throw DimensionError("probe: feature blocks differ in shape");
    train_x.middleRows(m * half, half) = f.topRows(half);
    test_x.middleRows(m * (n - half), n - half) = f.bottomRows(n - half);
    train_y.insert(train_y.end(), static_cast<std::size_t>(half), m);
    test_y.insert(test_y.end(), static_cast<std::size_t>(n - half), m);
  }

  Rng init_rng(cfg.seed, "probe-init");
  Mlp probe("probe", mlp_widths(static_cast<int>(width), cfg.hidden, M), Activation::tanh, init_rng);
  Adam opt(probe.parameters(), cfg.adam);
  Rng shuffle_rng(cfg.seed, "probe-shuffle");
  std::vector<std::size_t> order(static_cast<std::size_t>(train_x.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      const std::size_t count = std::min(bs, order.size() - begin);
      Matrix xb(static_cast<Eigen::Index>(count), width);
      std::vector<int> yb(count);
      for (std::size_t i = 0; i < count; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = train_x.row(static_cast<Eigen::Index>(order[begin + i]));
        yb[i] = train_y[order[begin + i]];
      }
      Tape tape;
      Var loss = softmax_cross_entropy(probe.forward(tape, tape.constant(std::move(xb))), yb);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
    }
  }
  return accuracy_of(probe.forward(test_x), test_y);
}

/// Held-out modality-classification accuracy on the primary extractor's
/// specific representations; near chance means R_S carries no modality identity.
template <typename Bundle>
double probe_discriminator(const Bundle& bundle, const Dataset& eval, const ProbeConfig& cfg = {}) {
  std::vector<Matrix> features;
  for (int m = 0; m < bundle.config.n_modalities; ++m) {
    features.push_back(extract(bundle, eval.x[static_cast<std::size_t>(m)], m).spec);
  }
  return train_modality_probe(features, cfg);
}

}  // namespace mpns
