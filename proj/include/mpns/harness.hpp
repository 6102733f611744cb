// Copyright 2026 The MPNS Lab Authors
// SPDX-License-Identifier: Apache-2.0

/// @file harness.hpp
/// Experiment configuration, the ablation grid, result CSVs, and trend checks.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "mpns/errors.hpp"
#include "mpns/eval.hpp"
#include "mpns/io.hpp"
#include "mpns/synthgen.hpp"
#include "mpns/trainer.hpp"

namespace mpns {

inline const std::vector<AblationMode> kAllModes{AblationMode::full_mpns, AblationMode::wo_pns, AblationMode::wo_inv_pns,
                                                 AblationMode::wo_spec_pns};

/// Mode label used for the lambda = 0 reference runs in result files.
inline constexpr const char* kLambdaZeroMode = "full_mpns_lambda0";

struct ExperimentGrid {
  std::vector<double> s_values{0.0, 0.3, 0.7};
  std::vector<AblationMode> modes = kAllModes;
  int seeds = 5;  ///< seeds 1..seeds
  std::size_t n_train = 15000;
  std::size_t n_eval = 5000;
  /// Extra full-MPNS runs with grl_lambda = 0 at the first s value, one per seed.
  bool lambda0_reference = true;
  int workers = 0;  ///< 0 = hardware concurrency

  std::size_t n_cells() const { return s_values.size() * modes.size() * static_cast<std::size_t>(seeds); }

  void validate() const {
    if (s_values.empty()) throw ValidationError("grid: s_values must be nonempty");
    if (modes.empty()) throw ValidationError("grid: modes must be nonempty");
    if (seeds < 1) throw ValidationError("grid: seeds must be >= 1");
    if (n_train < 2 || n_eval < 4) throw ValidationError("grid: n_train must be >= 2 and n_eval >= 4");
    if (workers < 0) throw ValidationError("grid: workers must be >= 0");
    for (double s : s_values) {
      if (!(s >= 0.0 && s < 1.0)) throw ValidationError("grid: s values must lie in [0, 1)");
    }
  }
};

struct ExperimentConfig {
  ExperimentGrid grid;
  GenParams gen;
  ModelConfig model;
  TrainConfig train;
  ProbeConfig probe;
  Imputation imputation = Imputation::zero;
};

// ---------------------------------------------------------------------------
// Config file: `key = value` lines, '#' comments.

namespace detail {

inline std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + text::format_double(v[i]);
  return out;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + std::to_string(v[i]);
  return out;
}

inline std::vector<double> parse_doubles(const std::string& value, const std::string& where) {
  std::vector<double> out;
  for (const std::string& t : text::split_ws(value)) out.push_back(text::parse_double(t, where));
  return out;
}

inline std::vector<int> parse_ints(const std::string& value, const std::string& where) {
  std::vector<int> out;
  for (const std::string& t : text::split_ws(value)) out.push_back(static_cast<int>(text::parse_int(t, where)));
  return out;
}

inline const char* grl_schedule_name(GrlSchedule g) { return g == GrlSchedule::constant ? "constant" : "dann_ramp"; }

inline std::string modes_string(const std::vector<AblationMode>& modes) {
  std::string out;
  for (std::size_t i = 0; i < modes.size(); ++i) out += (i ? " " : "") + std::string(to_string(modes[i]));
  return out;
}

}  // namespace detail

/// Every recognised key with its current value, in file order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& c) {
  using text::format_double;
  const GenParams& g = c.gen;
  const TrainConfig& t = c.train;
  const ModelConfig& m = c.model;
  const LossWeights& w = t.weights;
  return {
      {"s_values", detail::join_doubles(c.grid.s_values)},
      {"modes", detail::modes_string(c.grid.modes)},
      {"seeds", std::to_string(c.grid.seeds)},
      {"n_train", std::to_string(c.grid.n_train)},
      {"n_eval", std::to_string(c.grid.n_eval)},
      {"lambda0_reference", c.grid.lambda0_reference ? "true" : "false"},
      {"workers", std::to_string(c.grid.workers)},
      {"s", format_double(g.s)},
      {"d", std::to_string(g.d)},
      {"betas", detail::join_doubles({g.betas.begin(), g.betas.end()})},
      {"noise_std_h", format_double(g.noise_std_h)},
      {"noise_as_variance", g.noise_as_variance ? "true" : "false"},
      {"flip_prob", format_double(g.flip_prob)},
      {"sf_prob", format_double(g.sf_prob)},
      {"nc_prob", format_double(g.nc_prob)},
      {"seed", std::to_string(t.seed)},
      {"rep_dim_invariant", std::to_string(m.rep_dim_invariant)},
      {"rep_dim_specific", std::to_string(m.rep_dim_specific)},
      {"hidden", detail::join_ints(m.hidden)},
      {"head_hidden", detail::join_ints(m.head_hidden)},
      {"activation", m.activation == Activation::tanh ? "tanh" : "relu"},
      {"grl_lambda", format_double(m.grl_lambda)},
      {"shared_invariant_predictor", m.shared_invariant_predictor ? "true" : "false"},
      {"bounded_representations", m.bounded_representations ? "true" : "false"},
      {"epochs", std::to_string(t.epochs)},
      {"batch_size", std::to_string(t.batch_size)},
      {"lr", format_double(t.adam.lr)},
      {"beta1", format_double(t.adam.beta1)},
      {"beta2", format_double(t.adam.beta2)},
      {"adam_eps", format_double(t.adam.eps)},
      {"mode", to_string(t.mode)},
      {"w_pred", format_double(w.pred)},
      {"w_dec", format_double(w.dec)},
      {"w_inv", format_double(w.inv)},
      {"w_spec", format_double(w.spec)},
      {"w_bar_pred", format_double(w.bar_pred)},
      {"w_bar_inv", format_double(w.bar_inv)},
      {"w_inv_c", format_double(w.inv_c)},
      {"w_bar_spec", format_double(w.bar_spec)},
      {"w_spec_c", format_double(w.spec_c)},
      {"w_adv", format_double(w.adv)},
      {"dec_align_weight", format_double(t.dec.align_weight)},
      {"dec_orth_weight", format_double(t.dec.orth_weight)},
      {"product_form", t.product == ProductForm::batch_mean ? "batch_mean" : "per_sample"},
      {"complement_labels", t.complement_labels == ComplementLabelPolicy::per_epoch ? "per_epoch" : "fixed"},
      {"freeze_heads_in_complement", t.freeze_heads_in_complement ? "true" : "false"},
      {"grl_schedule", detail::grl_schedule_name(t.grl_schedule)},
      {"discriminator_lr_scale", format_double(t.discriminator_lr_scale)},
      {"divergence_limit", format_double(t.divergence_limit)},
      {"probe_hidden", detail::join_ints(c.probe.hidden)},
      {"probe_epochs", std::to_string(c.probe.epochs)},
      {"probe_seed", std::to_string(c.probe.seed)},
      {"imputation", c.imputation == Imputation::zero ? "zero" : "mean"},
  };
}

inline std::string format_config(const ExperimentConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_entries(c)) out += k + " = " + v + "\n";
  return out;
}

namespace detail {

inline void apply_config_key(ExperimentConfig& c, const std::string& key, const std::string& value, const std::string& where) {
  auto dbl = [&] { return text::parse_double(value, where); };
  auto integer = [&] { return text::parse_int(value, where); };
  auto boolean = [&] { return text::parse_bool(value, where); };
  auto positive_int = [&](const char* what) {
    const long long v = integer();
    if (v < 1) throw ParseError(where + ": " + what + " must be >= 1");
    return v;
  };
  TrainConfig& t = c.train;
  ModelConfig& m = c.model;
  LossWeights& w = t.weights;

  if (key == "s_values") {
    c.grid.s_values = parse_doubles(value, where);
  } else if (key == "modes") {
    c.grid.modes.clear();
    for (const std::string& tok : text::split_ws(value)) {
      try {
        c.grid.modes.push_back(parse_ablation_mode(tok));
      } catch (const ValidationError& e) {
        throw ParseError(where + ": " + e.what());
      }
    }
  } else if (key == "seeds") {
    c.grid.seeds = static_cast<int>(positive_int("seeds"));
  } else if (key == "n_train") {
    c.grid.n_train = static_cast<std::size_t>(positive_int("n_train"));
  } else if (key == "n_eval") {
    c.grid.n_eval = static_cast<std::size_t>(positive_int("n_eval"));
  } else if (key == "lambda0_reference") {
    c.grid.lambda0_reference = boolean();
  } else if (key == "workers") {
    c.grid.workers = static_cast<int>(integer());
  } else if (key == "seed") {
    t.seed = static_cast<std::uint64_t>(integer());
    c.gen.seed = t.seed;
  } else if (apply_gen_param(c.gen, key, value, where)) {
    // generator key
  } else if (key == "rep_dim_invariant") {
    m.rep_dim_invariant = static_cast<int>(integer());
  } else if (key == "rep_dim_specific") {
    m.rep_dim_specific = static_cast<int>(integer());
  } else if (key == "hidden") {
    m.hidden = parse_ints(value, where);
  } else if (key == "head_hidden") {
    m.head_hidden = parse_ints(value, where);
  } else if (key == "activation") {
    if (value == "tanh") {
      m.activation = Activation::tanh;
    } else if (value == "relu") {
      m.activation = Activation::relu;
    } else {
      throw ParseError(where + ": activation must be tanh or relu");
    }
  } else if (key == "grl_lambda") {
    m.grl_lambda = dbl();
  } else if (key == "shared_invariant_predictor") {
    m.shared_invariant_predictor = boolean();
  } else if (key == "bounded_representations") {
    m.bounded_representations = boolean();
  } else if (key == "epochs") {
    t.epochs = static_cast<int>(integer());
  } else if (key == "batch_size") {
    t.batch_size = static_cast<int>(integer());
  } else if (key == "lr") {
    t.adam.lr = dbl();
  } else if (key == "beta1") {
    t.adam.beta1 = dbl();
  } else if (key == "beta2") {
    t.adam.beta2 = dbl();
  } else if (key == "adam_eps") {
    t.adam.eps = dbl();
  } else if (key == "mode") {
    try {
      t.mode = parse_ablation_mode(value);
    } catch (const ValidationError& e) {
      throw ParseError(where + ": " + e.what());
    }
  } else if (key == "w_pred") {
    w.pred = dbl();
  } else if (key == "w_dec") {
    w.dec = dbl();
  } else if (key == "w_inv") {
    w.inv = dbl();
  } else if (key == "w_spec") {
    w.spec = dbl();
  } else if (key == "w_bar_pred") {
    w.bar_pred = dbl();
  } else if (key == "w_bar_inv") {
    w.bar_inv = dbl();
  } else if (key == "w_inv_c") {
    w.inv_c = dbl();
  } else if (key == "w_bar_spec") {
    w.bar_spec = dbl();
  } else if (key == "w_spec_c") {
    w.spec_c = dbl();
  } else if (key == "w_adv") {
    w.adv = dbl();
  } else if (key == "dec_align_weight") {
    t.dec.align_weight = dbl();
  } else if (key == "dec_orth_weight") {
    t.dec.orth_weight = dbl();
  } else if (key == "product_form") {
    if (value == "batch_mean") {
      t.product = ProductForm::batch_mean;
    } else if (value == "per_sample") {
      t.product = ProductForm::per_sample;
    } else {
      throw ParseError(where + ": product_form must be batch_mean or per_sample");
    }
  } else if (key == "complement_labels") {
    if (value == "per_epoch") {
      t.complement_labels = ComplementLabelPolicy::per_epoch;
    } else if (value == "fixed") {
      t.complement_labels = ComplementLabelPolicy::fixed;
    } else {
      throw ParseError(where + ": complement_labels must be per_epoch or fixed");
    }
  } else if (key == "freeze_heads_in_complement") {
    t.freeze_heads_in_complement = boolean();
  } else if (key == "grl_schedule") {
    if (value == "constant") {
      t.grl_schedule = GrlSchedule::constant;
    } else if (value == "dann_ramp") {
      t.grl_schedule = GrlSchedule::dann_ramp;
    } else {
      throw ParseError(where + ": grl_schedule must be constant or dann_ramp");
    }
  } else if (key == "discriminator_lr_scale") {
    t.discriminator_lr_scale = dbl();
  } else if (key == "divergence_limit") {
    t.divergence_limit = dbl();
  } else if (key == "probe_hidden") {
    c.probe.hidden = parse_ints(value, where);
  } else if (key == "probe_epochs") {
    c.probe.epochs = static_cast<int>(positive_int("probe_epochs"));
  } else if (key == "probe_seed") {
    c.probe.seed = static_cast<std::uint64_t>(integer());
  } else if (key == "imputation") {
    if (value == "zero") {
      c.imputation = Imputation::zero;
    } else if (value == "mean") {
      c.imputation = Imputation::mean;
    } else {
      throw ParseError(where + ": imputation must be zero or mean");
    }
  } else {
    throw ParseError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

/// Parses config text; later keys override earlier ones. Constraint
/// violations are reported as parse errors naming the source.
inline ExperimentConfig parse_config_text(const std::string& content, const std::string& source = "<config>") {
  ExperimentConfig c;
  std::istringstream in(content);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> key_line;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = text::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected 'key = value'");
    const std::string key = text::trim(std::string_view(body).substr(0, eq));
    const std::string value = text::trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ParseError(where + ": missing key");
    if (value.empty()) throw ParseError(where + ": missing value for '" + key + "'");
    detail::apply_config_key(c, key, value, where);
    key_line[key] = lineno;
  }
  auto check = [&](const std::vector<std::string>& keys, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const ValidationError& e) {
      std::string at = source;
      for (const std::string& k : keys) {
        if (auto it = key_line.find(k); it != key_line.end()) {
          at += ":" + std::to_string(it->second);
          break;
        }
      }
      throw ParseError(at + ": " + e.what());
    }
  };
  check({"d", "s", "noise_std_h", "flip_prob", "sf_prob", "nc_prob"}, [&] { c.gen.validate(); });
  check({"s_values", "modes", "seeds", "n_train", "n_eval", "workers"}, [&] { c.grid.validate(); });
  c.model.input_dims.assign(static_cast<std::size_t>(c.model.n_modalities), c.gen.modality_width());
  check({"rep_dim_invariant", "rep_dim_specific", "hidden", "head_hidden", "grl_lambda"}, [&] { c.model.validate(); });
  check({"epochs", "batch_size", "lr"}, [&] { c.train.validate(); });
  if (!(c.train.discriminator_lr_scale > 0.0)) throw ParseError(source + ": discriminator_lr_scale must be positive");
  if (!(c.train.divergence_limit > 0.0)) throw ParseError(source + ": divergence_limit must be positive");
  return c;
}

inline ExperimentConfig parse_config(const std::string& path) {
  auto in = text::open_in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

// ---------------------------------------------------------------------------
// Results

struct DcorRow {
  double s = 0.0;
  std::string mode;
  int seed = 0;
  int modality = 1;
  std::string variable;
  std::string rep_part;
  double dcor = 0.0;
};

struct AccuracyRow {
  double s = 0.0;
  std::string mode;
  int seed = 0;
  std::string eval_mode;  ///< full, only_modality_1, only_modality_2, or probe
  std::string predictor;  ///< joint, invariant, specific, or modality_probe
  double accuracy = 0.0;
};

struct CellStatus {
  double s = 0.0;
  std::string mode;
  int seed = 0;
  bool ok = false;
  double wall_seconds = 0.0;
  double probe_seconds = 0.0;
  double initial_total = 0.0;
  double final_total = 0.0;
  std::string message;
};

struct GridResult {
  std::vector<DcorRow> dcor;
  std::vector<AccuracyRow> accuracy;
  std::vector<CellStatus> cells;
  double wall_seconds = 0.0;
  int workers = 1;

  std::size_t failed_cells() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const CellStatus& c) { return !c.ok; }));
  }
};

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline constexpr const char* kDcorHeader = "s,mode,seed,modality,variable,rep_part,dcor";
inline constexpr const char* kAccuracyHeader = "s,mode,seed,eval_mode,predictor,accuracy";
inline constexpr const char* kCellsHeader = "s,mode,seed,status,wall_seconds,probe_seconds,initial_total,final_total,message";

inline void write_dcor_csv(const std::string& path, const std::vector<DcorRow>& rows) {
  auto out = text::open_out(path);
  out << "# generated " << utc_timestamp() << '\n' << kDcorHeader << '\n';
  for (const DcorRow& r : rows) {
    out << text::format_double(r.s) << ',' << r.mode << ',' << r.seed << ',' << r.modality << ',' << r.variable << ','
        << r.rep_part << ',' << text::format_double(r.dcor) << '\n';
  }
  if (!out) throw ParseError("write failed for '" + path + "'");
}

inline void write_accuracy_csv(const std::string& path, const std::vector<AccuracyRow>& rows) {
  auto out = text::open_out(path);
  out << "# generated " << utc_timestamp() << '\n' << kAccuracyHeader << '\n';
  for (const AccuracyRow& r : rows) {
    out << text::format_double(r.s) << ',' << r.mode << ',' << r.seed << ',' << r.eval_mode << ',' << r.predictor << ','
        << text::format_double(r.accuracy) << '\n';
  }
  if (!out) throw ParseError("write failed for '" + path + "'");
}

inline void write_cells_csv(const std::string& path, const std::vector<CellStatus>& rows) {
  auto out = text::open_out(path);
  out << "# generated " << utc_timestamp() << '\n' << kCellsHeader << '\n';
  for (const CellStatus& c : rows) {
    std::string msg = c.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    out << text::format_double(c.s) << ',' << c.mode << ',' << c.seed << ',' << (c.ok ? "ok" : "failed") << ','
        << text::format_double(c.wall_seconds) << ',' << text::format_double(c.probe_seconds) << ','
        << text::format_double(c.initial_total) << ','
        << text::format_double(c.final_total) << ',' << msg << '\n';
  }
  if (!out) throw ParseError("write failed for '" + path + "'");
}

namespace detail {

/// Data lines of a CSV with the given header; '#' lines are skipped.
inline std::vector<std::pair<std::string, std::vector<std::string>>> read_csv_body(const std::string& path,
                                                                                  const std::string& header,
                                                                                  std::size_t columns) {
  auto in = text::open_in(path);
  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      if (line != header) throw ParseError(path + ":" + std::to_string(lineno) + ": expected header '" + header + "'");
      saw_header = true;
      continue;
    }
    auto fields = text::split_char(line, ',');
    const std::string where = path + ":" + std::to_string(lineno);
    if (fields.size() != columns) {
      throw ParseError(where + ": expected " + std::to_string(columns) + " fields, got " + std::to_string(fields.size()));
    }
    out.emplace_back(where, std::move(fields));
  }
  if (!saw_header) throw ParseError(path + ": missing header '" + header + "'");
  return out;
}

}  // namespace detail

inline std::vector<DcorRow> read_dcor_csv(const std::string& path) {
  std::vector<DcorRow> rows;
  for (const auto& [where, f] : detail::read_csv_body(path, kDcorHeader, 7)) {
    rows.push_back({text::parse_double(f[0], where), f[1], static_cast<int>(text::parse_int(f[2], where)),
                    static_cast<int>(text::parse_int(f[3], where)), f[4], f[5], text::parse_double(f[6], where)});
  }
  return rows;
}

inline std::vector<AccuracyRow> read_accuracy_csv(const std::string& path) {
  std::vector<AccuracyRow> rows;
  for (const auto& [where, f] : detail::read_csv_body(path, kAccuracyHeader, 6)) {
    rows.push_back({text::parse_double(f[0], where), f[1], static_cast<int>(text::parse_int(f[2], where)), f[3], f[4],
                    text::parse_double(f[5], where)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Single cell

struct CellSpec {
  double s = 0.0;
  AblationMode mode = AblationMode::full_mpns;
  std::string mode_label;
  int seed = 1;
  double grl_lambda = 1.0;
};

struct CellOutput {
  CellStatus status;
  std::vector<DcorRow> dcor;
  std::vector<AccuracyRow> accuracy;
};

inline GenParams cell_gen_params(const ExperimentConfig& cfg, double s, int seed) {
  GenParams p = cfg.gen;
  p.s = s;
  p.seed = static_cast<std::uint64_t>(seed);
  return p;
}

/// Appends the dcor and accuracy rows of one evaluated bundle.
template <typename Bundle>
void evaluate_into(const Bundle& bundle, const Dataset& eval, const ProbeConfig& probe, Imputation imputation, double s,
                   const std::string& mode, int seed, std::vector<DcorRow>& dcor, std::vector<AccuracyRow>& accuracy,
                   bool with_probe = true, double* probe_seconds = nullptr) {
  for (const DcorEntry& e : evaluate_dcor(bundle, eval).entries) {
    dcor.push_back({s, mode, seed, e.modality, e.variable, to_string(e.part), e.dcor});
  }
  for (EvalMode em : {EvalMode::full, EvalMode::only_modality_1, EvalMode::only_modality_2}) {
    const AccuracyReport r = evaluate_accuracy(bundle, eval, em, imputation);
    accuracy.push_back({s, mode, seed, to_string(em), "joint", r.joint});
    accuracy.push_back({s, mode, seed, to_string(em), "invariant", r.invariant});
    accuracy.push_back({s, mode, seed, to_string(em), "specific", r.specific});
  }
  if (!with_probe) return;
  const auto start = std::chrono::steady_clock::now();
  accuracy.push_back({s, mode, seed, "probe", "modality_probe", probe_discriminator(bundle, eval, probe)});
  if (probe_seconds) *probe_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline CellOutput run_cell(const ExperimentConfig& cfg, const CellSpec& cell, const Dataset& train_data,
                           const Dataset& eval_data) {
  CellOutput out;
  out.status.s = cell.s;
  out.status.mode = cell.mode_label;
  out.status.seed = cell.seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    ModelConfig mc = cfg.model;
    mc.grl_lambda = cell.grl_lambda;
    TrainConfig tc = cfg.train;
    tc.mode = cell.mode;
    tc.seed = static_cast<std::uint64_t>(cell.seed);
    const TrainRecord rec = train(mc, tc, train_data);
    out.status.initial_total = rec.epochs.front().total;
    out.status.final_total = rec.epochs.back().total;
    evaluate_into(rec.bundle, eval_data, cfg.probe, cfg.imputation, cell.s, cell.mode_label, cell.seed, out.dcor,
                  out.accuracy, true, &out.status.probe_seconds);
    out.status.ok = true;
  } catch (const std::exception& e) {
    out.status.ok = false;
    out.status.message = e.what();
    out.dcor.clear();
    out.accuracy.clear();
  }
  out.status.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// Cells in output order: s, then mode, then seed; lambda = 0 reference runs last.
inline std::vector<CellSpec> grid_cells(const ExperimentConfig& cfg) {
  std::vector<CellSpec> cells;
  for (double s : cfg.grid.s_values) {
    for (AblationMode m : cfg.grid.modes) {
      for (int seed = 1; seed <= cfg.grid.seeds; ++seed) cells.push_back({s, m, to_string(m), seed, cfg.model.grl_lambda});
    }
  }
  if (cfg.grid.lambda0_reference) {
    for (int seed = 1; seed <= cfg.grid.seeds; ++seed) {
      cells.push_back({cfg.grid.s_values.front(), AblationMode::full_mpns, kLambdaZeroMode, seed, 0.0});
    }
  }
  return cells;
}

using CellCallback = std::function<void(std::size_t done, std::size_t total, const CellStatus&)>;

/// Runs every cell on a worker pool. Datasets are generated once per (s, seed)
/// and shared read-only across modes. A failing cell is recorded and the rest
/// continue; only an all-failed grid throws.
inline GridResult run_grid(const ExperimentConfig& cfg, const CellCallback& on_cell = {}) {
  cfg.grid.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::vector<CellSpec> cells = grid_cells(cfg);

  std::map<std::pair<double, int>, std::pair<Dataset, Dataset>> data;
  for (const CellSpec& c : cells) {
    const auto key = std::make_pair(c.s, c.seed);
    if (data.count(key)) continue;
    const GenParams p = cell_gen_params(cfg, c.s, c.seed);
    data.emplace(key, std::make_pair(generate_dataset(train_split(p), cfg.grid.n_train),
                                     generate_dataset(eval_split(p), cfg.grid.n_eval)));
  }

  int workers = cfg.grid.workers > 0 ? cfg.grid.workers : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min<int>(workers, static_cast<int>(cells.size())));

  std::vector<CellOutput> outputs(cells.size());
  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::mutex report_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const CellSpec& c = cells[i];
      const auto& [train_data, eval_data] = data.at({c.s, c.seed});
      outputs[i] = run_cell(cfg, c, train_data, eval_data);
      std::lock_guard<std::mutex> lock(report_mu);
      ++done;
      if (on_cell) on_cell(done, cells.size(), outputs[i].status);
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  GridResult result;
  result.workers = workers;
  for (CellOutput& o : outputs) {
    result.cells.push_back(o.status);
    result.dcor.insert(result.dcor.end(), o.dcor.begin(), o.dcor.end());
    result.accuracy.insert(result.accuracy.end(), o.accuracy.begin(), o.accuracy.end());
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (result.failed_cells() == result.cells.size()) {
    throw ValidationError("run_grid: all " + std::to_string(result.cells.size()) + " cells failed; first error: " +
                          result.cells.front().message);
  }
  return result;
}

inline void write_grid_result(const std::string& dir, const GridResult& r) {
  write_dcor_csv(dir + "/dcor.csv", r.dcor);
  write_accuracy_csv(dir + "/accuracy.csv", r.accuracy);
  write_cells_csv(dir + "/cells.csv", r.cells);
}

// ---------------------------------------------------------------------------
// Trend verification

struct SeedStats {
  double mean = 0.0;
  double sd = 0.0;  ///< sample standard deviation; 0 for one seed
  int n = 0;
};

inline SeedStats seed_stats(const std::vector<double>& v) {
  SeedStats st;
  st.n = static_cast<int>(v.size());
  if (v.empty()) return st;
  for (double x : v) st.mean += x;
  st.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - st.mean) * (x - st.mean);
    st.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return st;
}

struct TrendCheck {
  std::string id;  ///< a, b, or c
  std::string description;
  bool passed = true;
  bool evaluated = true;
  std::vector<std::string> details;  ///< one line per compared cell
};

struct TrendReport {
  std::vector<TrendCheck> checks;
  std::vector<std::string> warnings;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const TrendCheck& c) { return !c.evaluated || c.passed; });
  }

  std::string to_text() const {
    std::ostringstream out;
    for (const std::string& w : warnings) out << "warning: " << w << '\n';
    for (const TrendCheck& c : checks) {
      out << "[" << (!c.evaluated ? "SKIP" : c.passed ? "PASS" : "FAIL") << "] (" << c.id << ") " << c.description << '\n';
      for (const std::string& d : c.details) out << "    " << d << '\n';
    }
    out << (passed() ? "trend verification passed" : "trend verification FAILED") << '\n';
    return out.str();
  }
};

/// Seed-level values of the headline (concatenated) dCor, keyed by (s, mode, modality, variable).
class HeadlineTable {
 public:
  explicit HeadlineTable(const std::vector<DcorRow>& rows) {
    for (const DcorRow& r : rows) {
      if (r.rep_part != "concatenated") continue;
      values_[{r.s, r.mode, r.modality, r.variable}][r.seed] = r.dcor;
      s_values_.insert(r.s);
      modes_.insert(r.mode);
      modalities_.insert(r.modality);
      seeds_.insert(r.seed);
    }
  }

  bool has(double s, const std::string& mode, int modality, const std::string& var) const {
    return values_.count({s, mode, modality, var}) > 0;
  }

  SeedStats stats(double s, const std::string& mode, int modality, const std::string& var) const {
    std::vector<double> v;
    for (const auto& [seed, x] : values_.at({s, mode, modality, var})) v.push_back(x);
    return seed_stats(v);
  }

  std::vector<int> seeds_of(double s, const std::string& mode, int modality, const std::string& var) const {
    std::vector<int> out;
    if (auto it = values_.find({s, mode, modality, var}); it != values_.end()) {
      for (const auto& [seed, x] : it->second) out.push_back(seed);
    }
    return out;
  }

  const std::set<double>& s_values() const { return s_values_; }
  const std::set<std::string>& modes() const { return modes_; }
  const std::set<int>& modalities() const { return modalities_; }
  const std::set<int>& seeds() const { return seeds_; }

 private:
  std::map<std::tuple<double, std::string, int, std::string>, std::map<int, double>> values_;
  std::set<double> s_values_;
  std::set<std::string> modes_;
  std::set<int> modalities_;
  std::set<int> seeds_;
};

namespace detail {

inline std::string fmt_stats(const SeedStats& st) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f +/- %.4f", st.mean, st.sd);
  return buf;
}

inline std::string fmt_s(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2g", s);
  return buf;
}

}  // namespace detail

/// Checks the qualitative claims on seed-averaged headline dCor:
///   (a) full_mpns NS > wo_pns NS for every modality and s;
///   (b) wo_inv_pns NS <= wo_spec_pns NS for every modality and s;
///   (c) SC nondecreasing in s for every mode and modality.
/// Throws ValidationError listing missing cells when full_mpns/wo_pns are incomplete.
inline TrendReport verify_trends(const std::vector<DcorRow>& rows) {
  const HeadlineTable table(rows);
  const std::string full = "full_mpns", wo = "wo_pns";
  const std::set<int> seeds = table.seeds();
  std::set<int> modalities = table.modalities();
  if (modalities.empty()) modalities = {1, 2};
  std::vector<double> s_values(table.s_values().begin(), table.s_values().end());

  std::vector<std::string> missing;
  if (s_values.empty()) missing.push_back("no concatenated dcor rows at all");
  for (double s : s_values) {
    for (const std::string& mode : {full, wo}) {
      for (int m : modalities) {
        for (const std::string& var : {std::string("NS"), std::string("SC")}) {
          const std::vector<int> have = table.seeds_of(s, mode, m, var);
          for (int seed : seeds) {
            if (!std::binary_search(have.begin(), have.end(), seed)) {
              missing.push_back("s=" + detail::fmt_s(s) + " mode=" + mode + " seed=" + std::to_string(seed) +
                                " modality=" + std::to_string(m) + " variable=" + var);
            }
          }
        }
      }
    }
  }
  if (!missing.empty()) {
    std::string msg = "verify_trends: incomplete grid, missing cells:";
    for (const std::string& c : missing) msg += "\n  " + c;
    throw ValidationError(msg);
  }

  TrendReport report;
  if (seeds.size() < 2) report.warnings.push_back("single seed: no across-seed statistics, comparisons are point values");

  TrendCheck a{"a", "full_mpns NS-DC exceeds wo_pns NS-DC for every modality and s", true, true, {}};
  for (double s : s_values) {
    for (int m : modalities) {
      const SeedStats f = table.stats(s, full, m, "NS"), w = table.stats(s, wo, m, "NS");
      const bool ok = f.mean > w.mean;
      a.passed = a.passed && ok;
      a.details.push_back("s=" + detail::fmt_s(s) + " modality " + std::to_string(m) + ": full_mpns " + detail::fmt_stats(f) +
                          " vs wo_pns " + detail::fmt_stats(w) + (ok ? "  ok" : "  VIOLATED"));
    }
  }
  report.checks.push_back(a);

  TrendCheck b{"b", "dropping the invariant PNS term lowers NS-DC at least as much as dropping the specific term", true, true,
               {}};
  for (double s : s_values) {
    for (int m : modalities) {
      if (!table.has(s, "wo_inv_pns", m, "NS") || !table.has(s, "wo_spec_pns", m, "NS")) {
        b.evaluated = false;
        continue;
      }
      const SeedStats i = table.stats(s, "wo_inv_pns", m, "NS"), sp = table.stats(s, "wo_spec_pns", m, "NS");
      const bool ok = i.mean <= sp.mean;
      b.passed = b.passed && ok;
      b.details.push_back("s=" + detail::fmt_s(s) + " modality " + std::to_string(m) + ": wo_inv_pns " + detail::fmt_stats(i) +
                          " vs wo_spec_pns " + detail::fmt_stats(sp) + (ok ? "  ok" : "  VIOLATED"));
    }
  }
  if (!b.evaluated) {
    b.details = {"wo_inv_pns / wo_spec_pns results are incomplete; check not evaluated"};
    report.warnings.push_back("check (b) skipped: grid lacks wo_inv_pns or wo_spec_pns");
  }
  report.checks.push_back(b);

  TrendCheck c{"c", "SC-DC is nondecreasing in s for every mode and modality", true, true, {}};
  if (s_values.size() < 2) {
    c.evaluated = false;
    c.details.push_back("fewer than two s values; check not evaluated");
    report.warnings.push_back("check (c) skipped: grid has a single s value");
  } else {
    for (const std::string& mode : table.modes()) {
      for (int m : modalities) {
        std::string line = mode + " modality " + std::to_string(m) + ":";
        bool ok = true;
        double prev = -1.0;
        bool complete = true;
        for (double s : s_values) {
          if (!table.has(s, mode, m, "SC")) {
            complete = false;
            break;
          }
          const SeedStats st = table.stats(s, mode, m, "SC");
          line += " " + detail::fmt_stats(st);
          if (st.mean < prev) ok = false;
          prev = st.mean;
        }
        if (!complete) continue;
        c.passed = c.passed && ok;
        c.details.push_back(line + (ok ? "  ok" : "  VIOLATED"));
      }
    }
  }
  report.checks.push_back(c);
  return report;
}

inline TrendReport verify_trends_file(const std::string& dcor_csv) { return verify_trends(read_dcor_csv(dcor_csv)); }

}  // namespace mpns
