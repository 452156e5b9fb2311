// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "idamoe/commands.hpp"

#include <array>
#include <exception>
#include <ostream>
#include <thread>

#include "idamoe/harness.hpp"
#include "idamoe/report.hpp"

namespace idamoe {

namespace {

using json = nlohmann::ordered_json;

constexpr std::array<RouterKind, 3> kCompared = {RouterKind::baseline_no_aux,
                                                 RouterKind::baseline_aux, RouterKind::ida};

void ensure_out_dir(const std::filesystem::path& dir) {
  if (dir.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw ConfigError("output directory " + dir.string() + " is not usable" +
                      (ec ? ": " + ec.message() : ""));
  }
}

ExperimentConfig load(const CliConfig& cli) {
  if (cli.config_path.empty()) throw ConfigError("--config is required");
  ExperimentConfig cfg = load_config(cli.config_path);
  apply_seed_override(cfg, cli.seed_override);
  return cfg;
}

std::string csv_name(RouterKind kind) { return std::string(to_string(kind)) + ".csv"; }

int grad_check(const CliConfig& cli, std::ostream& out) {
  GradCheckOptions opts;
  opts.seed = cli.seed_override.value_or(1);
  opts.corrupt = cli.corrupt;
  const auto reports = run_grad_check(opts);
  out << format_report(reports);
  for (const auto& r : reports)
    if (!r.passed) return kExitRuntime;
  return kExitOk;
}

int train(const CliConfig& cli, std::ostream& out) {
  const ExperimentConfig cfg = load(cli);
  ensure_out_dir(cli.out_dir);
  const SyntheticTaskSpec spec = make_task(cfg.task);
  const ExperimentResult res = run_experiment_full(cfg.train, spec);
  write_file_atomic(cli.out_dir / csv_name(cfg.train.router_kind),
                    metrics_csv(res.series, cfg.train.n_experts));
  json summary{{"schema_version", kSchemaVersion},
               {"routers", json::array({run_summary(cfg.train, res.series)})}};
  write_file_atomic(cli.out_dir / "summary.json", dump_json(summary));
  json params{{"config", to_json(cfg)}, {"state", res.final_state}};
  write_file_atomic(cli.out_dir / "final_params.json", dump_json(params));
  out << "train: " << to_string(cfg.train.router_kind) << " " << res.series.size()
      << " steps written to " << cli.out_dir.string() << "\n";
  return kExitOk;
}

int compare(const CliConfig& cli, std::ostream& out) {
  const ExperimentConfig cfg = load(cli);
  ensure_out_dir(cli.out_dir);
  compare_routers(cfg, cli.out_dir, cli.parallel);
  out << "compare: wrote " << kCompared.size() << " metrics files and summary.json to "
      << cli.out_dir.string() << "\n";
  return kExitOk;
}

int ablate(const CliConfig& cli, std::ostream& out) {
  AblationAxis axis;
  try {
    axis = ablation_axis_from_string(cli.axis);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cli.values.empty()) throw ConfigError("--values needs at least one value");
  const ExperimentConfig cfg = load(cli);
  ensure_out_dir(cli.out_dir);
  std::vector<AblationRow> rows;
  try {
    rows = ablation_sweep(cfg.train, make_task(cfg.task), axis, cli.values);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("ablate: ") + e.what());
  }
  const std::string name = "ablation_" + std::string(to_string(axis)) + ".csv";
  write_file_atomic(cli.out_dir / name, ablation_csv(rows));
  out << "ablate: " << rows.size() << " rows written to " << (cli.out_dir / name).string()
      << "\n";
  return kExitOk;
}

int dump_params(const CliConfig& cli, std::ostream& out) {
  const ExperimentConfig cfg = load(cli);
  ensure_out_dir(cli.out_dir);
  const SyntheticTaskSpec spec = make_task(cfg.task);
  const ModelState state = init_model(cfg.train, spec, Rng(cfg.train.seed));
  json params{{"config", to_json(cfg)}, {"state", state}};
  write_file_atomic(cli.out_dir / "initial_params.json", dump_json(params));
  out << "dump-params: wrote " << (cli.out_dir / "initial_params.json").string() << "\n";
  return kExitOk;
}

}  // namespace

void compare_routers(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                     bool parallel) {
  const SyntheticTaskSpec spec = make_task(cfg.task);
  std::array<std::vector<MetricsRecord>, kCompared.size()> series;
  std::array<TrainConfig, kCompared.size()> configs;
  std::array<std::exception_ptr, kCompared.size()> errors;
  const auto run = [&](std::size_t i) {
    try {
      configs[i] = cfg.train;
      configs[i].router_kind = kCompared[i];
      series[i] = run_experiment(configs[i], spec);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (parallel) {
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < kCompared.size(); ++i) workers.emplace_back(run, i);
    for (auto& w : workers) w.join();
  } else {
    for (std::size_t i = 0; i < kCompared.size(); ++i) run(i);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  json routers = json::array();
  for (std::size_t i = 0; i < kCompared.size(); ++i) {
    write_file_atomic(out_dir / csv_name(kCompared[i]),
                      metrics_csv(series[i], cfg.train.n_experts));
    routers.push_back(run_summary(configs[i], series[i]));
  }
  json summary{{"schema_version", kSchemaVersion}, {"routers", std::move(routers)}};
  write_file_atomic(out_dir / "summary.json", dump_json(summary));
}

int run_command(const CliConfig& cli, std::ostream& out, std::ostream& err) {
  try {
    switch (cli.command) {
      case Command::grad_check: return grad_check(cli, out);
      case Command::train: return train(cli, out);
      case Command::compare: return compare(cli, out);
      case Command::ablate: return ablate(cli, out);
      case Command::dump_params: return dump_params(cli, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NonFiniteError& e) {
    err << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace idamoe
