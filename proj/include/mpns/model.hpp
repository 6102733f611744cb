// Copyright 2026 The MPNS Lab Authors
// SPDX-License-Identifier: Apache-2.0

/// @file model.hpp
/// The decoupling network and its complement branch.
///
/// Per modality m, the extractor maps x_m to [r_inv | r_spec]. The complement
/// extractor has the same architecture and produces [rbar_inv | rbar_spec].
/// Heads: an invariant predictor on r_inv (shared across modalities by
/// default), one specific predictor per modality on r_spec, a joint predictor
/// on the concatenation over modalities, and a modality discriminator that
/// sees r_spec through a gradient-reversal layer.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mpns/diffcore.hpp"
#include "mpns/errors.hpp"
#include "mpns/rng.hpp"

namespace mpns {

enum class Activation { tanh, relu };

inline const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

struct ModelConfig {
  int n_modalities = 2;
  std::vector<int> input_dims{40, 40};
  int rep_dim_invariant = 20;
  int rep_dim_specific = 20;
  /// Extractor hidden widths.
  std::vector<int> hidden{64, 64};
  /// Hidden widths of predictors and the discriminator.
  std::vector<int> head_hidden{64};
  Activation activation = Activation::tanh;
  int n_classes = 2;
  double grl_lambda = 1.0;
  bool shared_invariant_predictor = true;
  /// tanh on the extractor output layer, bounding every representation to (-1, 1).
  bool bounded_representations = false;

  int rep_dim() const { return rep_dim_invariant + rep_dim_specific; }

  void validate() const {
    if (n_modalities < 1) throw ValidationError("ModelConfig: n_modalities must be positive");
    if (static_cast<int>(input_dims.size()) != n_modalities) {
      throw ValidationError("ModelConfig: input_dims must list one width per modality");
    }
    for (int w : input_dims) {
      if (w < 1) throw ValidationError("ModelConfig: input widths must be positive");
    }
    if (rep_dim_invariant < 1 || rep_dim_specific < 1) throw ValidationError("ModelConfig: representation dims must be >= 1");
    if (hidden.empty()) throw ValidationError("ModelConfig: extractor hidden widths must be nonempty");
    for (int w : hidden) {
      if (w < 1) throw ValidationError("ModelConfig: hidden widths must be positive");
    }
    for (int w : head_hidden) {
      if (w < 1) throw ValidationError("ModelConfig: head hidden widths must be positive");
    }
    if (n_classes < 2) throw ValidationError("ModelConfig: n_classes must be >= 2");
    if (!(grl_lambda >= 0.0)) throw ValidationError("ModelConfig: grl_lambda must be nonnegative");
  }
};

struct Dense {
  Parameter weight;  ///< [in x out]
  Parameter bias;    ///< [1 x out]
};

/// Fully connected network; the activation is applied after every layer
/// except the last.
class Mlp {
 public:
  Mlp() = default;

  /// Glorot-uniform weights, zero biases.
  /// With squash_output the final layer also passes through tanh.
  Mlp(const std::string& name, const std::vector<int>& widths, Activation act, Rng& rng, bool squash_output = false)
      : act_(act), squash_output_(squash_output) {
    if (widths.size() < 2) throw ValidationError("Mlp: need at least input and output widths");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const int in = widths[l], out = widths[l + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
      Matrix w(in, out);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
      const std::string prefix = name + ".layer" + std::to_string(l);
      layers_.push_back({Parameter(prefix + ".weight", std::move(w)), Parameter(prefix + ".bias", Matrix::Zero(1, out))});
    }
  }

  Var forward(Tape& tape, Var x, bool frozen = false) {
    if (x.cols() != input_dim()) {
      throw DimensionError("Mlp: input " + shape_str(x.value()) + " vs expected width " + std::to_string(input_dim()));
    }
    Var h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Dense& layer = layers_[l];
      Var w = frozen ? tape.constant(layer.weight.value) : tape.param(layer.weight);
      Var b = frozen ? tape.constant(layer.bias.value) : tape.param(layer.bias);
      h = add_row(matmul(h, w), b);
      if (l + 1 < layers_.size()) {
        h = act_ == Activation::tanh ? mpns::tanh(h) : relu(h);
      } else if (squash_output_) {
        h = mpns::tanh(h);
      }
    }
    return h;
  }

  Matrix forward(const Matrix& x) const {
    if (x.cols() != input_dim()) {
      throw DimensionError("Mlp: input " + shape_str(x) + " vs expected width " + std::to_string(input_dim()));
    }
    Matrix h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix next;
      next.noalias() = h * layers_[l].weight.value;
      next.rowwise() += layers_[l].bias.value.row(0);
      if (l + 1 < layers_.size()) {
        if (act_ == Activation::tanh) {
          next = next.array().tanh().matrix();
        } else {
          next = next.cwiseMax(0.0);
        }
      } else if (squash_output_) {
        next = next.array().tanh().matrix();
      }
      h = std::move(next);
    }
    return h;
  }

  Eigen::Index input_dim() const { return layers_.front().weight.value.rows(); }
  Eigen::Index output_dim() const { return layers_.back().weight.value.cols(); }
  Activation activation() const { return act_; }
  bool squash_output() const { return squash_output_; }

  std::vector<Dense>& layers() { return layers_; }
  const std::vector<Dense>& layers() const { return layers_; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (Dense& d : layers_) {
      out.push_back(&d.weight);
      out.push_back(&d.bias);
    }
    return out;
  }

  std::vector<std::pair<Eigen::Index, Eigen::Index>> shape_signature() const {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> sig;
    for (const Dense& d : layers_) {
      sig.emplace_back(d.weight.value.rows(), d.weight.value.cols());
      sig.emplace_back(d.bias.value.rows(), d.bias.value.cols());
    }
    return sig;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Dense& d : layers_) n += static_cast<std::size_t>(d.weight.size() + d.bias.size());
    return n;
  }

 private:
  std::vector<Dense> layers_;
  Activation act_ = Activation::tanh;
  bool squash_output_ = false;
};

inline std::vector<int> mlp_widths(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

enum class Branch { primary, complement };

/// Parameters shared by training and inference: extractors and predictors.
struct InferenceBundle {
  ModelConfig config;
  std::vector<Mlp> extractors;       ///< primary extractor, one per modality
  std::vector<Mlp> invariant_heads;  ///< one if shared, else one per modality
  std::vector<Mlp> specific_heads;   ///< one per modality
  Mlp joint_head;

  Mlp& invariant_head(int m) { return invariant_heads[config.shared_invariant_predictor ? 0 : static_cast<std::size_t>(m)]; }
  const Mlp& invariant_head(int m) const {
    return invariant_heads[config.shared_invariant_predictor ? 0 : static_cast<std::size_t>(m)];
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    auto append = [&out](Mlp& net) {
      for (Parameter* p : net.parameters()) out.push_back(p);
    };
    for (Mlp& e : extractors) append(e);
    for (Mlp& h : invariant_heads) append(h);
    for (Mlp& h : specific_heads) append(h);
    append(joint_head);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = joint_head.parameter_count();
    for (const Mlp& e : extractors) n += e.parameter_count();
    for (const Mlp& h : invariant_heads) n += h.parameter_count();
    for (const Mlp& h : specific_heads) n += h.parameter_count();
    return n;
  }
};

/// Everything trained jointly: the inference bundle plus the complement
/// extractor and the modality discriminator.
struct ModelBundle : InferenceBundle {
  std::vector<Mlp> complements;  ///< complement extractor, one per modality
  Mlp discriminator;

  /// Each component draws from its own named stream, so for a fixed seed the
  /// primary extractor starts identical whatever else is configured.
  static ModelBundle init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelBundle b;
    b.config = cfg;
    const Activation act = cfg.activation;
    for (int m = 0; m < cfg.n_modalities; ++m) {
      const auto widths = mlp_widths(cfg.input_dims[static_cast<std::size_t>(m)], cfg.hidden, cfg.rep_dim());
      const std::string tag = std::to_string(m);
      Rng re(seed, "extractor/" + tag);
      b.extractors.emplace_back("extractor." + tag, widths, act, re, cfg.bounded_representations);
      Rng rc(seed, "complement/" + tag);
      b.complements.emplace_back("complement." + tag, widths, act, rc, cfg.bounded_representations);
      Rng rs(seed, "specific-head/" + tag);
      b.specific_heads.emplace_back("specific_head." + tag,
                                    mlp_widths(cfg.rep_dim_specific, cfg.head_hidden, cfg.n_classes), act, rs);
    }
    const int n_inv = cfg.shared_invariant_predictor ? 1 : cfg.n_modalities;
    for (int k = 0; k < n_inv; ++k) {
      const std::string tag = std::to_string(k);
      Rng ri(seed, "invariant-head/" + tag);
      b.invariant_heads.emplace_back("invariant_head." + tag,
                                     mlp_widths(cfg.rep_dim_invariant, cfg.head_hidden, cfg.n_classes), act, ri);
    }
    Rng rj(seed, "joint-head");
    b.joint_head = Mlp("joint_head", mlp_widths(cfg.n_modalities * cfg.rep_dim(), cfg.head_hidden, cfg.n_classes), act, rj);
    Rng rd(seed, "discriminator");
    b.discriminator =
        Mlp("discriminator", mlp_widths(cfg.rep_dim_specific, cfg.head_hidden, cfg.n_modalities), act, rd);
    return b;
  }

  Mlp& extractor(int m, Branch which) {
    auto& nets = which == Branch::primary ? extractors : complements;
    return nets[static_cast<std::size_t>(m)];
  }
  const Mlp& extractor(int m, Branch which) const {
    const auto& nets = which == Branch::primary ? extractors : complements;
    return nets[static_cast<std::size_t>(m)];
  }

  /// Fixed order: inference parameters, then complement, then discriminator.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = InferenceBundle::parameters();
    for (Mlp& c : complements) {
      for (Parameter* p : c.parameters()) out.push_back(p);
    }
    for (Parameter* p : discriminator.parameters()) out.push_back(p);
    return out;
  }

  std::vector<Parameter*> complement_parameters() {
    std::vector<Parameter*> out;
    for (Mlp& c : complements) {
      for (Parameter* p : c.parameters()) out.push_back(p);
    }
    return out;
  }

  std::vector<Parameter*> predictor_parameters() {
    std::vector<Parameter*> out;
    auto append = [&out](Mlp& net) {
      for (Parameter* p : net.parameters()) out.push_back(p);
    };
    for (Mlp& h : invariant_heads) append(h);
    for (Mlp& h : specific_heads) append(h);
    append(joint_head);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = InferenceBundle::parameter_count() + discriminator.parameter_count();
    for (const Mlp& c : complements) n += c.parameter_count();
    return n;
  }

  InferenceBundle inference() const { return static_cast<const InferenceBundle&>(*this); }
};

// ---------------------------------------------------------------------------
// Differentiable forward pieces (training)

struct RepVars {
  Var inv;
  Var spec;
};

inline RepVars extract(Tape& tape, ModelBundle& bundle, Var x, int modality, Branch which) {
  Var out = bundle.extractor(modality, which).forward(tape, x);
  const auto& cfg = bundle.config;
  return {slice_cols(out, 0, cfg.rep_dim_invariant), slice_cols(out, cfg.rep_dim_invariant, cfg.rep_dim_specific)};
}

/// `frozen` evaluates the head with constant parameters; the complement branch
/// uses this so its losses never train the predictors.
inline Var predict_invariant(Tape& tape, ModelBundle& bundle, Var r_inv, int modality, bool frozen = false) {
  return bundle.invariant_head(modality).forward(tape, r_inv, frozen);
}

inline Var predict_specific(Tape& tape, ModelBundle& bundle, Var r_spec, int modality, bool frozen = false) {
  return bundle.specific_heads[static_cast<std::size_t>(modality)].forward(tape, r_spec, frozen);
}

inline Var predict_joint(Tape& tape, ModelBundle& bundle, const std::vector<RepVars>& reps, bool frozen = false) {
  if (static_cast<int>(reps.size()) != bundle.config.n_modalities) {
    throw ValidationError("predict_joint: expected " + std::to_string(bundle.config.n_modalities) + " modalities, got " +
                          std::to_string(reps.size()));
  }
  std::vector<Var> parts;
  for (const RepVars& r : reps) {
    parts.push_back(r.inv);
    parts.push_back(r.spec);
  }
  return bundle.joint_head.forward(tape, concat_cols(parts), frozen);
}

inline Var discriminate_modality(Tape& tape, ModelBundle& bundle, Var r_spec, double grl_lambda) {
  return bundle.discriminator.forward(tape, gradient_reversal(r_spec, grl_lambda));
}

/// For each label, a class drawn uniformly from the other n_classes - 1.
inline std::vector<int> generate_complement_labels(std::span<const int> y, int n_classes, Rng& rng) {
  if (n_classes < 2) throw ValidationError("generate_complement_labels: need at least 2 classes");
  std::vector<int> out;
  out.reserve(y.size());
  for (int label : y) {
    if (label < 0 || label >= n_classes) throw ValidationError("generate_complement_labels: label out of range");
    const int r = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_classes - 1)));
    out.push_back(r < label ? r : r + 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plain forward pieces (evaluation); work on either bundle type.

struct Reps {
  Matrix inv;
  Matrix spec;
};

template <typename Bundle>
Reps extract(const Bundle& bundle, const Matrix& x, int modality) {
  const Matrix out = bundle.extractors[static_cast<std::size_t>(modality)].forward(x);
  const auto& cfg = bundle.config;
  return {out.leftCols(cfg.rep_dim_invariant), out.middleCols(cfg.rep_dim_invariant, cfg.rep_dim_specific)};
}

inline Reps extract(const ModelBundle& bundle, const Matrix& x, int modality, Branch which) {
  const Matrix out = bundle.extractor(modality, which).forward(x);
  const auto& cfg = bundle.config;
  return {out.leftCols(cfg.rep_dim_invariant), out.middleCols(cfg.rep_dim_invariant, cfg.rep_dim_specific)};
}

template <typename Bundle>
Matrix predict_joint(const Bundle& bundle, const std::vector<Reps>& reps) {
  if (static_cast<int>(reps.size()) != bundle.config.n_modalities) {
    throw ValidationError("predict_joint: expected " + std::to_string(bundle.config.n_modalities) + " modalities, got " +
                          std::to_string(reps.size()));
  }
  const Eigen::Index n = reps.front().inv.rows();
  Matrix joint(n, bundle.config.n_modalities * bundle.config.rep_dim());
  Eigen::Index at = 0;
  for (const Reps& r : reps) {
    joint.middleCols(at, r.inv.cols()) = r.inv;
    at += r.inv.cols();
    joint.middleCols(at, r.spec.cols()) = r.spec;
    at += r.spec.cols();
  }
  return bundle.joint_head.forward(joint);
}

template <typename Bundle>
std::vector<int> predict_labels(const Bundle& bundle, const std::vector<Matrix>& x) {
  std::vector<Reps> reps;
  for (int m = 0; m < bundle.config.n_modalities; ++m) reps.push_back(extract(bundle, x[static_cast<std::size_t>(m)], m));
  const Matrix logits = predict_joint(bundle, reps);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

}  // namespace mpns
