// Copyright 2026 The MPNS Lab Authors
// SPDX-License-Identifier: Apache-2.0

/// @file io.hpp
/// Plain-text file formats: datasets, checkpoints, SCM descriptions, and the
/// training log.
///
/// Dataset file
///   # MPNS-DATA 1
///   # key = value          (GenParams, n_train, n_eval)
///   # columns: x1_1 .. x1_W x2_1 .. x2_W y ns sf nc sc
///   one row per sample, whitespace separated, train rows first
///
/// Checkpoint file
///   MPNS-CKPT 1
///   kind full|inference
///   meta <key> <value>     (free-form run metadata)
///   config <key> <values>  (ModelConfig)
///   params <count>
///   param <name> <rows> <cols>, then <rows> lines of <cols> values
///   end
///
/// SCM file ('#' starts a comment)
///   noise <name> <p0> <p1> ...         one line per exogenous variable
///   cause <p0> <p1> ...                unconfounded cause distribution, or
///   cause_given <u>=<v> ... : <p0> ...  one row per joint noise assignment
///   outcomes <L>                       outcome cardinality (default 2)
///   f <z> <u1> <u2> ... = <y>          outcome table, every (z, u) exactly once
///   query <z> <zbar> <y>               optional default query

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mpns/errors.hpp"
#include "mpns/losses.hpp"
#include "mpns/model.hpp"
#include "mpns/pns_oracle.hpp"
#include "mpns/synthgen.hpp"

namespace mpns {

// ---------------------------------------------------------------------------
// Text helpers

namespace text {

/// Shortest of %.15g / %.16g / %.17g that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int precision : {15, 16}) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string> split_char(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::optional<double> try_double(std::string_view s) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

inline std::optional<long long> try_int(std::string_view s) {
  long long v = 0;
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

inline double parse_double(std::string_view s, const std::string& where) {
  if (auto v = try_double(s)) return *v;
  throw ParseError(where + ": expected a number, got '" + std::string(s) + "'");
}

inline long long parse_int(std::string_view s, const std::string& where) {
  if (auto v = try_int(s)) return *v;
  throw ParseError(where + ": expected an integer, got '" + std::string(s) + "'");
}

inline bool parse_bool(std::string_view s, const std::string& where) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ParseError(where + ": expected a boolean, got '" + std::string(s) + "'");
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace text

// ---------------------------------------------------------------------------
// Dataset file

struct DatasetFile {
  GenParams params;  ///< base parameters; splits use derived seeds
  Dataset train;
  Dataset eval;
};

inline constexpr std::string_view kDatasetMagic = "# MPNS-DATA 1";

inline void write_gen_params(std::ostream& out, const GenParams& p, std::string_view prefix) {
  out << prefix << "s = " << text::format_double(p.s) << '\n';
  out << prefix << "d = " << p.d << '\n';
  out << prefix << "betas = " << text::format_double(p.betas[0]) << ' ' << text::format_double(p.betas[1]) << ' '
      << text::format_double(p.betas[2]) << ' ' << text::format_double(p.betas[3]) << '\n';
  out << prefix << "noise_std_h = " << text::format_double(p.noise_std_h) << '\n';
  out << prefix << "noise_as_variance = " << (p.noise_as_variance ? "true" : "false") << '\n';
  out << prefix << "flip_prob = " << text::format_double(p.flip_prob) << '\n';
  out << prefix << "sf_prob = " << text::format_double(p.sf_prob) << '\n';
  out << prefix << "nc_prob = " << text::format_double(p.nc_prob) << '\n';
  out << prefix << "seed = " << p.seed << '\n';
}

inline void write_dataset_rows(std::ostream& out, const Dataset& ds) {
  std::string line;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    line.clear();
    for (const Matrix& x : ds.x) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        line += text::format_double(x(static_cast<Eigen::Index>(i), c));
        line += ' ';
      }
    }
    const LatentRecord& l = ds.latents[i];
    line += std::to_string(ds.y[i]) + ' ' + std::to_string(l.ns) + ' ' + std::to_string(l.sf) + ' ' +
            std::to_string(l.nc) + ' ' + text::format_double(l.sc) + '\n';
    out << line;
  }
}

inline void write_dataset_file(const std::string& path, const DatasetFile& f) {
  if (f.train.n_modalities() != 2) throw ValidationError("dataset file: expected two modalities");
  auto out = text::open_out(path);
  out << kDatasetMagic << '\n';
  write_gen_params(out, f.params, "# ");
  out << "# n_train = " << f.train.size() << '\n';
  out << "# n_eval = " << f.eval.size() << '\n';
  const auto w1 = f.train.x[0].cols(), w2 = f.train.x[1].cols();
  out << "# columns:";
  for (Eigen::Index c = 1; c <= w1; ++c) out << " x1_" << c;
  for (Eigen::Index c = 1; c <= w2; ++c) out << " x2_" << c;
  out << " y ns sf nc sc\n";
  write_dataset_rows(out, f.train);
  write_dataset_rows(out, f.eval);
  if (!out) throw ParseError("write failed for '" + path + "'");
}

/// Applies one `key = value` GenParams entry; returns false for keys it does not own.
inline bool apply_gen_param(GenParams& p, const std::string& key, const std::string& value, const std::string& where) {
  if (key == "s") {
    p.s = text::parse_double(value, where);
  } else if (key == "d") {
    p.d = static_cast<int>(text::parse_int(value, where));
  } else if (key == "betas") {
    const auto parts = text::split_ws(value);
    if (parts.size() != 4) throw ParseError(where + ": betas needs 4 values");
    for (std::size_t i = 0; i < 4; ++i) p.betas[i] = text::parse_double(parts[i], where);
  } else if (key == "noise_std_h") {
    p.noise_std_h = text::parse_double(value, where);
  } else if (key == "noise_as_variance") {
    p.noise_as_variance = text::parse_bool(value, where);
  } else if (key == "flip_prob") {
    p.flip_prob = text::parse_double(value, where);
  } else if (key == "sf_prob") {
    p.sf_prob = text::parse_double(value, where);
  } else if (key == "nc_prob") {
    p.nc_prob = text::parse_double(value, where);
  } else if (key == "seed") {
    p.seed = static_cast<std::uint64_t>(text::parse_int(value, where));
  } else {
    return false;
  }
  return true;
}

inline DatasetFile read_dataset_file(const std::string& path) {
  auto in = text::open_in(path);
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != kDatasetMagic) {
    throw ParseError(path + ": missing '" + std::string(kDatasetMagic) + "' header");
  }
  DatasetFile f;
  long long n_train = -1, n_eval = -1;
  std::size_t lineno = 1;
  std::vector<MultimodalSample> rows;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path + ":" + std::to_string(lineno);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = text::trim(std::string_view(line).substr(1));
      if (body.rfind("columns:", 0) == 0) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) throw ParseError(where + ": malformed header line");
      const std::string key = text::trim(std::string_view(body).substr(0, eq));
      const std::string value = text::trim(std::string_view(body).substr(eq + 1));
      if (key == "n_train") {
        n_train = text::parse_int(value, where);
      } else if (key == "n_eval") {
        n_eval = text::parse_int(value, where);
      } else if (!apply_gen_param(f.params, key, value, where)) {
        throw ParseError(where + ": unknown header key '" + key + "'");
      }
      continue;
    }
    if (rows.empty()) f.params.validate();
    const auto fields = text::split_ws(line);
    const auto w = static_cast<std::size_t>(f.params.modality_width());
    if (fields.size() != 2 * w + 5) {
      throw ParseError(where + ": expected " + std::to_string(2 * w + 5) + " columns, got " + std::to_string(fields.size()));
    }
    MultimodalSample s;
    for (std::size_t c = 0; c < w; ++c) s.x1.push_back(text::parse_double(fields[c], where));
    for (std::size_t c = 0; c < w; ++c) s.x2.push_back(text::parse_double(fields[w + c], where));
    s.y = static_cast<int>(text::parse_int(fields[2 * w], where));
    s.latents.y = s.y;
    s.latents.ns = static_cast<int>(text::parse_int(fields[2 * w + 1], where));
    s.latents.sf = static_cast<int>(text::parse_int(fields[2 * w + 2], where));
    s.latents.nc = static_cast<int>(text::parse_int(fields[2 * w + 3], where));
    s.latents.sc = text::parse_double(fields[2 * w + 4], where);
    rows.push_back(std::move(s));
  }
  if (n_train < 1 || n_eval < 0) throw ParseError(path + ": header must declare n_train >= 1 and n_eval >= 0");
  if (rows.size() != static_cast<std::size_t>(n_train + n_eval)) {
    throw ParseError(path + ": header declares " + std::to_string(n_train + n_eval) + " rows, found " +
                     std::to_string(rows.size()));
  }
  const auto split = rows.begin() + static_cast<std::ptrdiff_t>(n_train);
  f.train = Dataset::from_samples(train_split(f.params), {rows.begin(), split});
  if (n_eval > 0) f.eval = Dataset::from_samples(eval_split(f.params), {split, rows.end()});
  return f;
}

/// Generates both splits exactly as the experiment grid does.
inline DatasetFile generate_dataset_file(const GenParams& p, std::size_t n_train, std::size_t n_eval) {
  DatasetFile f;
  f.params = p;
  f.train = generate_dataset(train_split(p), n_train);
  f.eval = generate_dataset(eval_split(p), n_eval);
  return f;
}

// ---------------------------------------------------------------------------
// Checkpoint

inline constexpr std::string_view kCheckpointMagic = "MPNS-CKPT 1";

enum class CheckpointKind { full, inference };

struct CheckpointMeta {
  std::map<std::string, std::string> values;
};

namespace detail {

inline void write_model_config(std::ostream& out, const ModelConfig& c) {
  out << "config n_modalities " << c.n_modalities << '\n';
  out << "config input_dims";
  for (int w : c.input_dims) out << ' ' << w;
  out << '\n';
  out << "config rep_dim_invariant " << c.rep_dim_invariant << '\n';
  out << "config rep_dim_specific " << c.rep_dim_specific << '\n';
  out << "config hidden";
  for (int w : c.hidden) out << ' ' << w;
  out << '\n';
  out << "config head_hidden";
  for (int w : c.head_hidden) out << ' ' << w;
  out << '\n';
  out << "config activation " << (c.activation == Activation::tanh ? "tanh" : "relu") << '\n';
  out << "config n_classes " << c.n_classes << '\n';
  out << "config grl_lambda " << text::format_double(c.grl_lambda) << '\n';
  out << "config shared_invariant_predictor " << (c.shared_invariant_predictor ? "true" : "false") << '\n';
  out << "config bounded_representations " << (c.bounded_representations ? "true" : "false") << '\n';
}

inline std::vector<int> parse_int_list(const std::vector<std::string>& tok, std::size_t from, const std::string& where) {
  std::vector<int> out;
  for (std::size_t i = from; i < tok.size(); ++i) out.push_back(static_cast<int>(text::parse_int(tok[i], where)));
  return out;
}

inline void apply_model_config(ModelConfig& c, const std::vector<std::string>& tok, const std::string& where) {
  if (tok.size() < 3) throw ParseError(where + ": config line needs a key and a value");
  const std::string& key = tok[1];
  if (key == "n_modalities") {
    c.n_modalities = static_cast<int>(text::parse_int(tok[2], where));
  } else if (key == "input_dims") {
    c.input_dims = parse_int_list(tok, 2, where);
  } else if (key == "rep_dim_invariant") {
    c.rep_dim_invariant = static_cast<int>(text::parse_int(tok[2], where));
  } else if (key == "rep_dim_specific") {
    c.rep_dim_specific = static_cast<int>(text::parse_int(tok[2], where));
  } else if (key == "hidden") {
    c.hidden = parse_int_list(tok, 2, where);
  } else if (key == "head_hidden") {
    c.head_hidden = parse_int_list(tok, 2, where);
  } else if (key == "activation") {
    if (tok[2] == "tanh") {
      c.activation = Activation::tanh;
    } else if (tok[2] == "relu") {
      c.activation = Activation::relu;
    } else {
      throw ParseError(where + ": unknown activation '" + tok[2] + "'");
    }
  } else if (key == "n_classes") {
    c.n_classes = static_cast<int>(text::parse_int(tok[2], where));
  } else if (key == "grl_lambda") {
    c.grl_lambda = text::parse_double(tok[2], where);
  } else if (key == "shared_invariant_predictor") {
    c.shared_invariant_predictor = text::parse_bool(tok[2], where);
  } else if (key == "bounded_representations") {
    c.bounded_representations = text::parse_bool(tok[2], where);
  } else {
    throw ParseError(where + ": unknown config key '" + key + "'");
  }
}

inline void write_params(std::ostream& out, const std::vector<const Parameter*>& params) {
  out << "params " << params.size() << '\n';
  for (const Parameter* p : params) {
    out << "param " << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        if (c) out << ' ';
        out << text::format_double(p->value(r, c));
      }
      out << '\n';
    }
  }
  out << "end\n";
}

inline void append_params(std::vector<const Parameter*>& out, const Mlp& net) {
  for (const Dense& d : net.layers()) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
}

/// Same order as InferenceBundle::parameters().
inline std::vector<const Parameter*> const_params(const InferenceBundle& b) {
  std::vector<const Parameter*> out;
  for (const Mlp& e : b.extractors) append_params(out, e);
  for (const Mlp& h : b.invariant_heads) append_params(out, h);
  for (const Mlp& h : b.specific_heads) append_params(out, h);
  append_params(out, b.joint_head);
  return out;
}

/// Same order as ModelBundle::parameters().
inline std::vector<const Parameter*> const_params(const ModelBundle& b) {
  std::vector<const Parameter*> out = const_params(static_cast<const InferenceBundle&>(b));
  for (const Mlp& c : b.complements) append_params(out, c);
  append_params(out, b.discriminator);
  return out;
}

struct RawCheckpoint {
  CheckpointKind kind = CheckpointKind::full;
  CheckpointMeta meta;
  ModelConfig config;
  std::vector<Parameter> params;
};

inline RawCheckpoint read_raw_checkpoint(const std::string& path) {
  auto in = text::open_in(path);
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != kCheckpointMagic) {
    throw ParseError(path + ": not a checkpoint (missing '" + std::string(kCheckpointMagic) + "')");
  }
  RawCheckpoint ck;
  std::size_t lineno = 1;
  long long declared = -1;
  bool ended = false;
  while (!ended && std::getline(in, line)) {
    ++lineno;
    const std::string where = path + ":" + std::to_string(lineno);
    const auto tok = text::split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "kind") {
      if (tok.size() != 2 || (tok[1] != "full" && tok[1] != "inference")) throw ParseError(where + ": bad kind line");
      ck.kind = tok[1] == "full" ? CheckpointKind::full : CheckpointKind::inference;
    } else if (tok[0] == "meta") {
      if (tok.size() < 2) throw ParseError(where + ": meta line needs a key");
      std::string value;
      for (std::size_t i = 2; i < tok.size(); ++i) value += (i > 2 ? " " : "") + tok[i];
      ck.meta.values[tok[1]] = value;
    } else if (tok[0] == "config") {
      apply_model_config(ck.config, tok, where);
    } else if (tok[0] == "params") {
      if (tok.size() != 2) throw ParseError(where + ": bad params line");
      declared = text::parse_int(tok[1], where);
    } else if (tok[0] == "param") {
      if (tok.size() != 4) throw ParseError(where + ": param line needs name, rows, cols");
      const auto rows = text::parse_int(tok[2], where), cols = text::parse_int(tok[3], where);
      if (rows < 1 || cols < 1) throw ParseError(where + ": parameter shape must be positive");
      Matrix value(rows, cols);
      for (long long r = 0; r < rows; ++r) {
        if (!std::getline(in, line)) throw ParseError(path + ": truncated parameter block '" + tok[1] + "'");
        ++lineno;
        const auto vals = text::split_ws(line);
        if (static_cast<long long>(vals.size()) != cols) {
          throw ParseError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) + " values");
        }
        for (long long c = 0; c < cols; ++c) value(r, c) = text::parse_double(vals[static_cast<std::size_t>(c)], where);
      }
      ck.params.emplace_back(tok[1], std::move(value));
    } else if (tok[0] == "end") {
      ended = true;
    } else {
      throw ParseError(where + ": unknown record '" + tok[0] + "'");
    }
  }
  if (!ended) throw ParseError(path + ": missing 'end' record");
  if (declared != static_cast<long long>(ck.params.size())) {
    throw ParseError(path + ": declared " + std::to_string(declared) + " parameters, found " + std::to_string(ck.params.size()));
  }
  return ck;
}

inline void load_into(const std::vector<Parameter*>& target, const std::vector<Parameter>& source, const std::string& path) {
  if (target.size() != source.size()) {
    throw ParseError(path + ": checkpoint holds " + std::to_string(source.size()) + " parameters, model expects " +
                     std::to_string(target.size()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    const Parameter& s = source[i];
    Parameter& t = *target[i];
    if (s.name != t.name) throw ParseError(path + ": parameter '" + s.name + "' where '" + t.name + "' was expected");
    if (s.value.rows() != t.value.rows() || s.value.cols() != t.value.cols()) {
      throw ParseError(path + ": parameter '" + s.name + "' has shape " + shape_str(s.value) + ", model expects " +
                       shape_str(t.value));
    }
    t.value = s.value;
    t.zero_grad();
  }
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelBundle& bundle, const CheckpointMeta& meta = {}) {
  auto out = text::open_out(path);
  out << kCheckpointMagic << "\nkind full\n";
  for (const auto& [k, v] : meta.values) out << "meta " << k << ' ' << v << '\n';
  detail::write_model_config(out, bundle.config);
  detail::write_params(out, detail::const_params(bundle));
  if (!out) throw ParseError("write failed for '" + path + "'");
}

inline void save_checkpoint(const std::string& path, const InferenceBundle& bundle, const CheckpointMeta& meta = {}) {
  auto out = text::open_out(path);
  out << kCheckpointMagic << "\nkind inference\n";
  for (const auto& [k, v] : meta.values) out << "meta " << k << ' ' << v << '\n';
  detail::write_model_config(out, bundle.config);
  detail::write_params(out, detail::const_params(bundle));
  if (!out) throw ParseError("write failed for '" + path + "'");
}

struct LoadedModel {
  CheckpointKind kind = CheckpointKind::full;
  CheckpointMeta meta;
  /// Always populated; for a full checkpoint it is the stripped view.
  InferenceBundle inference;
  /// Populated only for full checkpoints.
  std::optional<ModelBundle> full;
};

inline LoadedModel load_checkpoint(const std::string& path) {
  detail::RawCheckpoint raw = detail::read_raw_checkpoint(path);
  raw.config.validate();
  LoadedModel out;
  out.kind = raw.kind;
  out.meta = raw.meta;
  ModelBundle shell = ModelBundle::init(raw.config, 0);
  if (raw.kind == CheckpointKind::full) {
    detail::load_into(shell.parameters(), raw.params, path);
    out.inference = shell.inference();
    out.full = std::move(shell);
  } else {
    out.inference = shell.inference();
    detail::load_into(out.inference.parameters(), raw.params, path);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SCM description

struct ScmQuery {
  int z = 1;
  int zbar = 0;
  int y = 1;
};

struct ScmFile {
  ScmSpec model;
  std::optional<ScmQuery> query;
};

inline ScmFile parse_scm(std::istream& in, const std::string& source = "<scm>") {
  ScmFile f;
  ScmSpec& m = f.model;
  m.cause_table.clear();
  std::vector<double> plain_cause;
  struct CauseRow {
    std::vector<std::pair<std::string, int>> assignment;
    std::vector<double> probs;
    std::string where;
  };
  std::vector<CauseRow> cause_rows;
  struct OutcomeRow {
    int z;
    std::vector<int> u;
    int y;
    std::string where;
  };
  std::vector<OutcomeRow> outcome_rows;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto tok = text::split_ws(line);
    if (tok.empty()) continue;
    const std::string& kw = tok[0];
    if (kw == "noise") {
      if (tok.size() < 3) throw ParseError(where + ": noise needs a name and at least one probability");
      NoiseVar v{tok[1], {}};
      for (std::size_t i = 2; i < tok.size(); ++i) v.probs.push_back(text::parse_double(tok[i], where));
      for (const NoiseVar& other : m.noise) {
        if (other.name == v.name) throw ParseError(where + ": duplicate noise variable '" + v.name + "'");
      }
      m.noise.push_back(std::move(v));
    } else if (kw == "cause") {
      if (!plain_cause.empty()) throw ParseError(where + ": duplicate cause line");
      for (std::size_t i = 1; i < tok.size(); ++i) plain_cause.push_back(text::parse_double(tok[i], where));
      if (plain_cause.size() < 2) throw ParseError(where + ": cause needs at least two probabilities");
    } else if (kw == "cause_given") {
      CauseRow row;
      row.where = where;
      std::size_t i = 1;
      for (; i < tok.size() && tok[i] != ":"; ++i) {
        const auto eq = tok[i].find('=');
        if (eq == std::string::npos) throw ParseError(where + ": expected <noise>=<value>, got '" + tok[i] + "'");
        row.assignment.emplace_back(tok[i].substr(0, eq),
                                    static_cast<int>(text::parse_int(std::string_view(tok[i]).substr(eq + 1), where)));
      }
      if (i == tok.size()) throw ParseError(where + ": cause_given needs ':' before the probabilities");
      for (++i; i < tok.size(); ++i) row.probs.push_back(text::parse_double(tok[i], where));
      cause_rows.push_back(std::move(row));
    } else if (kw == "outcomes") {
      if (tok.size() != 2) throw ParseError(where + ": outcomes takes one integer");
      m.outcome_card = static_cast<int>(text::parse_int(tok[1], where));
    } else if (kw == "f") {
      const auto eq = std::find(tok.begin(), tok.end(), "=");
      if (eq == tok.end() || eq + 2 != tok.end() || eq - tok.begin() < 2) {
        throw ParseError(where + ": expected 'f <z> <u...> = <y>'");
      }
      OutcomeRow row{static_cast<int>(text::parse_int(tok[1], where)), {}, static_cast<int>(text::parse_int(*(eq + 1), where)),
                     where};
      for (auto it = tok.begin() + 2; it != eq; ++it) row.u.push_back(static_cast<int>(text::parse_int(*it, where)));
      outcome_rows.push_back(std::move(row));
    } else if (kw == "query") {
      if (tok.size() != 4) throw ParseError(where + ": query takes <z> <zbar> <y>");
      f.query = ScmQuery{static_cast<int>(text::parse_int(tok[1], where)), static_cast<int>(text::parse_int(tok[2], where)),
                         static_cast<int>(text::parse_int(tok[3], where))};
    } else {
      throw ParseError(where + ": unknown keyword '" + kw + "'");
    }
  }
  if (m.noise.empty()) throw ParseError(source + ": at least one noise variable is required");
  if (plain_cause.empty() == cause_rows.empty()) throw ParseError(source + ": give either one 'cause' line or 'cause_given' rows");
  const std::size_t joint = m.joint_size();
  if (joint > ScmSpec::kMaxJoint) throw ParseError(source + ": more than 10^6 joint noise assignments");

  auto index_of = [&m](const std::string& name) -> int {
    for (std::size_t k = 0; k < m.noise.size(); ++k) {
      if (m.noise[k].name == name) return static_cast<int>(k);
    }
    return -1;
  };
  auto check_value = [&m](std::size_t k, int v, const std::string& where) {
    if (v < 0 || static_cast<std::size_t>(v) >= m.noise[k].probs.size()) {
      throw ParseError(where + ": value " + std::to_string(v) + " out of range for noise '" + m.noise[k].name + "'");
    }
  };

  if (!plain_cause.empty()) {
    m.cause_card = static_cast<int>(plain_cause.size());
    m.cause_table = plain_cause;
  } else {
    m.cause_card = static_cast<int>(cause_rows.front().probs.size());
    m.cause_table.assign(joint * static_cast<std::size_t>(m.cause_card), -1.0);
    for (const CauseRow& row : cause_rows) {
      if (row.assignment.size() != m.noise.size()) throw ParseError(row.where + ": cause_given must assign every noise variable");
      if (static_cast<int>(row.probs.size()) != m.cause_card) throw ParseError(row.where + ": inconsistent cause cardinality");
      std::vector<int> u(m.noise.size(), -1);
      for (const auto& [name, v] : row.assignment) {
        const int k = index_of(name);
        if (k < 0) throw ParseError(row.where + ": unknown noise variable '" + name + "'");
        if (u[static_cast<std::size_t>(k)] >= 0) throw ParseError(row.where + ": noise '" + name + "' assigned twice");
        check_value(static_cast<std::size_t>(k), v, row.where);
        u[static_cast<std::size_t>(k)] = v;
      }
      const std::size_t j = m.encode(u);
      if (m.cause_table[j * static_cast<std::size_t>(m.cause_card)] >= 0.0) throw ParseError(row.where + ": duplicate cause_given row");
      std::copy(row.probs.begin(), row.probs.end(), m.cause_table.begin() + static_cast<std::ptrdiff_t>(j * m.cause_card));
    }
    if (cause_rows.size() != joint) {
      throw ParseError(source + ": cause_given covers " + std::to_string(cause_rows.size()) + " of " + std::to_string(joint) +
                       " noise assignments");
    }
  }

  m.outcome_table.assign(static_cast<std::size_t>(m.cause_card) * joint, -1);
  for (const OutcomeRow& row : outcome_rows) {
    if (row.z < 0 || row.z >= m.cause_card) throw ParseError(row.where + ": cause value out of range");
    if (row.u.size() != m.noise.size()) throw ParseError(row.where + ": f must list one value per noise variable");
    for (std::size_t k = 0; k < row.u.size(); ++k) check_value(k, row.u[k], row.where);
    if (row.y < 0 || row.y >= m.outcome_card) throw ParseError(row.where + ": outcome value out of range");
    int& slot = m.outcome_table[static_cast<std::size_t>(row.z) * joint + m.encode(row.u)];
    if (slot >= 0) throw ParseError(row.where + ": duplicate f entry");
    slot = row.y;
  }
  if (outcome_rows.size() != m.outcome_table.size()) {
    throw ParseError(source + ": outcome table has " + std::to_string(outcome_rows.size()) + " of " +
                     std::to_string(m.outcome_table.size()) + " entries");
  }
  try {
    m.validate();
  } catch (const ValidationError& e) {
    throw ParseError(source + ": " + e.what());
  }
  return f;
}

inline ScmFile read_scm_file(const std::string& path) {
  auto in = text::open_in(path);
  return parse_scm(in, path);
}

inline void write_scm(std::ostream& out, const ScmSpec& m, const std::optional<ScmQuery>& query = std::nullopt) {
  for (const NoiseVar& v : m.noise) {
    out << "noise " << v.name;
    for (double p : v.probs) out << ' ' << text::format_double(p);
    out << '\n';
  }
  const std::size_t joint = m.joint_size();
  if (!m.confounded()) {
    out << "cause";
    for (double p : m.cause_table) out << ' ' << text::format_double(p);
    out << '\n';
  } else {
    for (std::size_t j = 0; j < joint; ++j) {
      const auto u = m.decode(j);
      out << "cause_given";
      for (std::size_t k = 0; k < u.size(); ++k) out << ' ' << m.noise[k].name << '=' << u[k];
      out << " :";
      for (int z = 0; z < m.cause_card; ++z) out << ' ' << text::format_double(m.cause_prob(z, j));
      out << '\n';
    }
  }
  out << "outcomes " << m.outcome_card << '\n';
  for (int z = 0; z < m.cause_card; ++z) {
    for (std::size_t j = 0; j < joint; ++j) {
      out << "f " << z;
      for (int v : m.decode(j)) out << ' ' << v;
      out << " = " << m.outcome(z, j) << '\n';
    }
  }
  if (query) out << "query " << query->z << ' ' << query->zbar << ' ' << query->y << '\n';
}

// ---------------------------------------------------------------------------
// Training log

inline std::string training_log_header(int n_modalities) {
  std::string h = "epoch";
  for (const auto& [name, value] : LossBreakdown::zeros(n_modalities).named()) h += "," + name;
  return h;
}

inline std::string training_log_row(int epoch, const LossBreakdown& b) {
  std::string row = std::to_string(epoch);
  for (const auto& [name, value] : b.named()) row += "," + text::format_double(value);
  return row;
}

inline void write_training_log(const std::string& path, const std::vector<LossBreakdown>& epochs, int n_modalities) {
  auto out = text::open_out(path);
  out << training_log_header(n_modalities) << '\n';
  for (std::size_t e = 0; e < epochs.size(); ++e) out << training_log_row(static_cast<int>(e + 1), epochs[e]) << '\n';
  if (!out) throw ParseError("write failed for '" + path + "'");
}

}  // namespace mpns
