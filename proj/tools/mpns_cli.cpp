// Copyright 2026 The MPNS Lab Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: generate | train | eval | oracle | ablation | verify.
// Exit codes: 0 success, 2 trend verification failed, 1 operational error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mpns/harness.hpp"
#include "mpns/io.hpp"
#include "mpns/pns_oracle.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitTrendFailure = 2;

mpns::ExperimentConfig load_config(const std::string& path) {
  return path.empty() ? mpns::parse_config_text("") : mpns::parse_config(path);
}

struct GenerateArgs {
  std::string config;
  std::optional<double> s;
  std::size_t n_train = 15000;
  std::size_t n_eval = 5000;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int run_generate(const GenerateArgs& a) {
  mpns::ExperimentConfig cfg = load_config(a.config);
  mpns::GenParams p = cfg.gen;
  if (a.s) p.s = *a.s;
  if (a.seed) p.seed = *a.seed;
  p.validate();
  const mpns::DatasetFile f = mpns::generate_dataset_file(p, a.n_train, a.n_eval);
  mpns::write_dataset_file(a.out, f);
  std::printf("wrote %zu train + %zu eval samples (s=%g, seed=%llu, width %d per modality) to %s\n", f.train.size(),
              f.eval.size(), p.s, static_cast<unsigned long long>(p.seed), p.modality_width(), a.out.c_str());
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string log;
  std::string inference_out;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  mpns::ExperimentConfig cfg = load_config(a.config);
  if (a.mode) cfg.train.mode = mpns::parse_ablation_mode(*a.mode);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  const mpns::DatasetFile data = mpns::read_dataset_file(a.data);
  cfg.model.input_dims = {static_cast<int>(data.train.x[0].cols()), static_cast<int>(data.train.x[1].cols())};

  std::optional<std::ofstream> log;
  if (!a.log.empty()) {
    log.emplace(mpns::text::open_out(a.log));
    *log << mpns::training_log_header(cfg.model.n_modalities) << '\n';
  }
  auto on_epoch = [&](int epoch, const mpns::LossBreakdown& b) {
    if (log) *log << mpns::training_log_row(epoch, b) << '\n' << std::flush;
    if (!a.quiet) std::printf("epoch %3d  total %.6f  l_pred %.6f  l_adv %.6f\n", epoch, b.total, b.l_pred, b.l_adv);
  };
  const mpns::TrainRecord rec = mpns::train(cfg.model, cfg.train, data.train, on_epoch);

  mpns::CheckpointMeta meta;
  meta.values["mode"] = mpns::to_string(cfg.train.mode);
  meta.values["seed"] = std::to_string(cfg.train.seed);
  meta.values["s"] = mpns::text::format_double(data.params.s);
  meta.values["epochs"] = std::to_string(cfg.train.epochs);
  mpns::save_checkpoint(a.out, rec.bundle, meta);
  if (!a.inference_out.empty()) mpns::save_checkpoint(a.inference_out, mpns::inference_model(rec), meta);
  std::printf("trained %s for %d epochs in %.1f s; checkpoint written to %s\n", mpns::to_string(cfg.train.mode),
              cfg.train.epochs, rec.wall_seconds, a.out.c_str());
  return kExitOk;
}

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::string data;
  std::string dcor_out;
  std::string accuracy_out;
  bool probe = true;
};

int run_eval(const EvalArgs& a) {
  const mpns::ExperimentConfig cfg = load_config(a.config);
  const mpns::LoadedModel model = mpns::load_checkpoint(a.checkpoint);
  const mpns::DatasetFile data = mpns::read_dataset_file(a.data);
  if (data.eval.size() == 0) throw mpns::ValidationError(a.data + ": dataset has no eval split");
  auto meta = [&](const std::string& key, const std::string& fallback) {
    const auto it = model.meta.values.find(key);
    return it == model.meta.values.end() ? fallback : it->second;
  };
  const std::string mode = meta("mode", "unknown");
  const int seed = static_cast<int>(mpns::text::parse_int(meta("seed", "0"), a.checkpoint + " meta seed"));
  std::vector<mpns::DcorRow> dcor;
  std::vector<mpns::AccuracyRow> accuracy;
  mpns::evaluate_into(model.inference, data.eval, cfg.probe, cfg.imputation, data.params.s, mode, seed, dcor, accuracy,
                      a.probe);
  for (const mpns::DcorRow& r : dcor) {
    if (r.rep_part == "concatenated") std::printf("dcor  modality %d  %-2s  %.4f\n", r.modality, r.variable.c_str(), r.dcor);
  }
  for (const mpns::AccuracyRow& r : accuracy) {
    std::printf("acc   %-16s %-15s %.4f\n", r.eval_mode.c_str(), r.predictor.c_str(), r.accuracy);
  }
  if (!a.dcor_out.empty()) mpns::write_dcor_csv(a.dcor_out, dcor);
  if (!a.accuracy_out.empty()) mpns::write_accuracy_csv(a.accuracy_out, accuracy);
  return kExitOk;
}

struct OracleArgs {
  std::string scm;
  std::optional<int> z, zbar, y;
  std::string csv;
};

int run_oracle(const OracleArgs& a) {
  const mpns::ScmFile f = mpns::read_scm_file(a.scm);
  mpns::ScmQuery q = f.query.value_or(mpns::ScmQuery{});
  if (a.z) q.z = *a.z;
  if (a.zbar) q.zbar = *a.zbar;
  if (a.y) q.y = *a.y;
  const mpns::PnsReport r = mpns::analyze_pns(f.model, q.z, q.zbar, q.y);
  std::printf("query            z=%d zbar=%d y=%d\n", q.z, q.zbar, q.y);
  std::printf("pns_exact        %.17g\n", r.pns_exact);
  std::printf("pns_two_term     %.17g\n", r.pns_two_term);
  std::printf("lemma1_estimand  %.17g\n", r.lemma1_estimand);
  std::printf("monotonic        %s\n", r.monotonic ? "true" : "false");
  std::printf("monotonic_rev    %s\n", r.monotonic_reverse ? "true" : "false");
  std::printf("exogenous        %s\n", r.exogenous ? "true" : "false");
  if (!a.csv.empty()) {
    const bool fresh = !std::filesystem::exists(a.csv);
    std::ofstream out(a.csv, std::ios::app);
    if (!out) throw mpns::ParseError("cannot open '" + a.csv + "' for writing");
    if (fresh) out << "scm,z,zbar,y,pns_exact,pns_two_term,lemma1_estimand,monotonic,monotonic_reverse,exogenous\n";
    out << a.scm << ',' << q.z << ',' << q.zbar << ',' << q.y << ',' << mpns::text::format_double(r.pns_exact) << ','
        << mpns::text::format_double(r.pns_two_term) << ',' << mpns::text::format_double(r.lemma1_estimand) << ','
        << r.monotonic << ',' << r.monotonic_reverse << ',' << r.exogenous << '\n';
  }
  return kExitOk;
}

struct AblationArgs {
  std::string config;
  std::string out_dir;
  std::optional<int> workers;
  std::optional<int> seeds;
  std::optional<int> epochs;
  bool dry_run = false;
  bool verify = false;
};

int run_ablation(const AblationArgs& a) {
  mpns::ExperimentConfig cfg = load_config(a.config);
  if (a.workers) cfg.grid.workers = *a.workers;
  if (a.seeds) cfg.grid.seeds = *a.seeds;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  cfg.grid.validate();
  cfg.train.validate();
  const auto cells = mpns::grid_cells(cfg);
  if (a.dry_run) {
    std::printf("%s", mpns::format_config(cfg).c_str());
    std::printf("# %zu training runs\n", cells.size());
    return kExitOk;
  }
  std::filesystem::create_directories(a.out_dir);
  {
    auto out = mpns::text::open_out(a.out_dir + "/config.txt");
    out << mpns::format_config(cfg);
  }
  std::printf("running %zu cells\n", cells.size());
  const mpns::GridResult r = mpns::run_grid(cfg, [](std::size_t done, std::size_t total, const mpns::CellStatus& c) {
    std::printf("[%zu/%zu] s=%g %-17s seed %d  %s  %.1f s%s%s\n", done, total, c.s, c.mode.c_str(), c.seed,
                c.ok ? "ok" : "FAILED", c.wall_seconds, c.ok ? "" : "  ", c.message.c_str());
    std::fflush(stdout);
  });
  mpns::write_grid_result(a.out_dir, r);
  double serial = 0.0;
  for (const mpns::CellStatus& c : r.cells) serial += c.wall_seconds;
  std::printf("grid finished: %.1f s wall on %d worker(s), %.1f s summed over cells, %zu failed\n", r.wall_seconds,
              r.workers, serial, r.failed_cells());
  const mpns::TrendReport report = mpns::verify_trends(r.dcor);
  std::printf("%s", report.to_text().c_str());
  if (a.verify && !report.passed()) return kExitTrendFailure;
  return kExitOk;
}

int run_verify(const std::string& dcor_csv) {
  const mpns::TrendReport report = mpns::verify_trends_file(dcor_csv);
  std::printf("%s", report.to_text().c_str());
  return report.passed() ? kExitOk : kExitTrendFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal PNS representation learning lab"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic two-modality dataset (train + eval splits)");
  generate->add_option("--config", gen.config, "Config file (generator keys)")->check(CLI::ExistingFile);
  generate->add_option("--s", gen.s, "Spurious correlation level in [0, 1)");
  generate->add_option("--n-train", gen.n_train, "Training samples")->capture_default_str();
  generate->add_option("--n-eval", gen.n_eval, "Evaluation samples")->capture_default_str();
  generate->add_option("--seed", gen.seed, "Generator seed");
  generate->add_option("--out", gen.out, "Output dataset file")->required();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model on a dataset file");
  train->add_option("--config", tr.config, "Config file")->check(CLI::ExistingFile);
  train->add_option("--data", tr.data, "Dataset file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", tr.out, "Checkpoint path (full model)")->required();
  train->add_option("--log", tr.log, "Per-epoch loss CSV");
  train->add_option("--inference-out", tr.inference_out, "Also write the stripped inference checkpoint");
  train->add_option("--mode", tr.mode, "Ablation mode (full_mpns, wo_pns, wo_inv_pns, wo_spec_pns)");
  train->add_option("--seed", tr.seed, "Training seed");
  train->add_option("--epochs", tr.epochs, "Epoch count");
  train->add_flag("--quiet", tr.quiet, "No per-epoch output");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset's eval split");
  eval->add_option("--config", ev.config, "Config file (probe and imputation keys)")->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", ev.data, "Dataset file")->required()->check(CLI::ExistingFile);
  eval->add_option("--dcor-out", ev.dcor_out, "Distance-correlation CSV");
  eval->add_option("--accuracy-out", ev.accuracy_out, "Accuracy CSV");
  bool no_probe = false;
  eval->add_flag("--no-probe", no_probe, "Skip the modality probe");

  OracleArgs orc;
  auto* oracle = app.add_subcommand("oracle", "Exact PNS analysis of a finite SCM file");
  oracle->add_option("--scm", orc.scm, "SCM description file")->required()->check(CLI::ExistingFile);
  oracle->add_option("--z", orc.z, "Cause value z");
  oracle->add_option("--zbar", orc.zbar, "Contrast value zbar");
  oracle->add_option("--y", orc.y, "Outcome value y");
  oracle->add_option("--csv", orc.csv, "Append the report as a CSV row");

  AblationArgs abl;
  auto* ablation = app.add_subcommand("ablation", "Run the ablation grid and write dcor/accuracy/cells CSVs");
  ablation->add_option("--config", abl.config, "Config file")->check(CLI::ExistingFile);
  ablation->add_option("--out-dir", abl.out_dir, "Output directory")->default_val("results");
  ablation->add_option("--workers", abl.workers, "Worker threads (0 = all cores)");
  ablation->add_option("--seeds", abl.seeds, "Seeds per cell");
  ablation->add_option("--epochs", abl.epochs, "Epoch count");
  ablation->add_flag("--dry-run", abl.dry_run, "Print the resolved config and cell count only");
  ablation->add_flag("--verify", abl.verify, "Exit 2 when trend verification fails");

  std::string verify_csv;
  auto* verify = app.add_subcommand("verify", "Check the qualitative trends on a stored dcor CSV");
  verify->add_option("--dcor", verify_csv, "dcor.csv from an ablation run")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (*generate) return run_generate(gen);
    if (*train) return run_train(tr);
    if (*eval) {
      ev.probe = !no_probe;
      return run_eval(ev);
    }
    if (*oracle) return run_oracle(orc);
    if (*ablation) return run_ablation(abl);
    if (*verify) return run_verify(verify_csv);
  } catch (const mpns::DivergenceError& e) {
    std::fprintf(stderr, "error: training diverged: %s\n", e.what());
    return kExitError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitError;
}
