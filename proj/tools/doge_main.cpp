// doge: simulate datasets, initialize, refine, and run or summarize sweeps.
//
// Every subcommand takes --config FILE (repeatable, later files win) and
// --set KEY=VALUE (repeatable, applied last). Errors go to stderr as one JSON
// object and the exit code is nonzero.

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "doge/bench.hpp"
#include "doge/config.hpp"
#include "doge/dataset.hpp"
#include "doge/refiner.hpp"
#include "doge/settings.hpp"
#include "doge/simworld.hpp"
#include "doge/window.hpp"

namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

struct CommonOptions {
  std::vector<std::string> configs;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, CommonOptions& opt) {
  app->add_option("-c,--config", opt.configs, "key-value configuration file (repeatable)")->check(CLI::ExistingFile);
  app->add_option("-s,--set", opt.sets, "override KEY=VALUE (repeatable)");
}

doge::KeyValueConfig load_config(const CommonOptions& opt,
                                 const std::vector<std::pair<std::string, std::string>>& aliases) {
  doge::KeyValueConfig cfg;
  for (const auto& path : opt.configs) cfg.merge(doge::KeyValueConfig::load(path));
  for (const auto& [key, value] : aliases) cfg.set(key, value, "--" + key);
  for (const auto& item : opt.sets) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects KEY=VALUE, got '" + item + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    cfg.set(trim(item.substr(0, eq)), trim(item.substr(eq + 1)), "--set");
  }
  return cfg;
}

template <typename T>
void alias(std::vector<std::pair<std::string, std::string>>& out, const std::string& key, const std::optional<T>& v) {
  if (!v) return;
  if constexpr (std::is_same_v<T, std::string>) {
    out.emplace_back(key, *v);
  } else if constexpr (std::is_floating_point_v<T>) {
    out.emplace_back(key, doge::format_double(*v));
  } else {
    out.emplace_back(key, std::to_string(*v));
  }
}

ordered_json matrix_json(const Eigen::MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

ordered_json vector_json(const Eigen::VectorXd& v) {
  ordered_json out = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

struct WindowOptions {
  double keyframe_rate = 4.0;
  std::size_t start = 0;
};

WindowOptions window_options(const doge::KeyValueConfig& cfg) {
  WindowOptions w;
  w.keyframe_rate = cfg.get_double("window.keyframe_rate", w.keyframe_rate);
  if (!(w.keyframe_rate > 0.0)) throw std::invalid_argument("'window.keyframe_rate': must be positive");
  const auto start = cfg.get_int("window.start", 0);
  if (start < 0) throw std::invalid_argument("'window.start': must be >= 0");
  w.start = static_cast<std::size_t>(start);
  return w;
}

// One configuration file can serve every subcommand, so a key is accepted when
// any reader knows it; anything else is a typo.
void reject_unknown(const doge::KeyValueConfig& cfg) {
  const doge::KeyValueConfig probe = cfg;
  (void)doge::scenario_from_config(probe);
  (void)doge::experiment_from_config(probe);
  (void)doge::refiner_from_config(probe);
  (void)window_options(probe);
  doge::reject_unused(probe, {""});
}

int run_simulate(const CommonOptions& common, const std::string& out,
                 const std::vector<std::pair<std::string, std::string>>& aliases) {
  auto cfg = load_config(common, aliases);
  const auto scenario = doge::scenario_from_config(cfg);
  reject_unknown(cfg);
  const auto data = doge::generate(scenario);
  doge::export_dataset(data, out);
  ordered_json j;
  j["dataset"] = out;
  j["imu_samples"] = data.imu.size();
  j["feature_observations"] = data.features.size();
  j["groundtruth_records"] = data.groundtruth.size();
  std::cout << j.dump(2) << '\n';
  return 0;
}

int run_init(const CommonOptions& common, const std::string& dataset, const std::string& out, bool search,
             const std::vector<std::pair<std::string, std::string>>& aliases) {
  auto cfg = load_config(common, aliases);
  const auto refiner = doge::refiner_from_config(cfg);
  const auto win = window_options(cfg);
  reject_unknown(cfg);

  const auto data = doge::ingest_dataset(dataset);
  const auto build_start = std::chrono::steady_clock::now();
  const doge::KeyframeSequence seq(data, win.keyframe_rate, refiner.solver.pixel_sigma);
  const double keyframe_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - build_start).count();
  doge::CalibState nominal;
  nominal.R_CI = data.calib.R_CI_nominal;

  doge::Initialization init;
  if (search) {
    auto found = doge::initialize(seq, nominal, refiner.solver, refiner.window_size, win.start);
    if (found) {
      init = *found;
    } else {
      init.first_keyframe = win.start;
      init.report.failure_reason = "no window starting at or after keyframe " + std::to_string(win.start) + " succeeded";
    }
  } else {
    auto window = seq.build_window(win.start, refiner.window_size, nominal, refiner.solver);
    init.first_keyframe = win.start;
    init.report = doge::irls_solve(window, nominal, refiner.solver);
    init.attempts = 1;
  }
  const auto& r = init.report;

  ordered_json j;
  j["success"] = r.success;
  j["converged"] = r.converged;
  j["failure_reason"] = r.failure_reason;
  j["first_keyframe"] = init.first_keyframe;
  j["window_size"] = refiner.window_size;
  j["attempts"] = init.attempts;
  j["b_g"] = vector_json(r.state.b_g);
  j["R_CI"] = matrix_json(r.state.R_CI);
  j["covariance"] = matrix_json(r.covariance);
  j["pass_rate"] = r.pass_rate;
  j["condition_number"] = r.condition_number;
  j["loops"] = r.loops;
  j["lm_iterations"] = r.lm_iterations;
  j["reintegrations"] = r.reintegrations;
  j["pairs_used"] = r.pairs_used;
  j["loop_costs"] = r.loop_costs;
  j["timing_ms"] = {{"keyframes", keyframe_ms},
                    {"estimation", r.estimation_ms},
                    {"reintegration", r.reintegration_ms}};
  if (data.calib.R_CI_true && !data.groundtruth.empty() && init.first_keyframe < seq.size()) {
    const auto* gt = doge::nearest_truth(data, seq[init.first_keyframe].t_ns);
    const auto m = doge::compute_metrics(r.state, {gt->b_g, *data.calib.R_CI_true});
    j["errors"] = {{"bias_error", m.bias_error},
                   {"bias_absolute", m.bias_absolute},
                   {"r_ci_error_deg", m.r_ci_error_deg}};
  }
  write_text(out, j.dump(2) + "\n");
  if (r.success) return 0;
  std::cerr << ordered_json{{"error", "initialization_failed"}, {"message", r.failure_reason}}.dump() << '\n';
  return 3;
}

int run_refine(const CommonOptions& common, const std::string& dataset, const std::string& out,
               const std::vector<std::pair<std::string, std::string>>& aliases) {
  auto cfg = load_config(common, aliases);
  const auto refiner = doge::refiner_from_config(cfg);
  const auto win = window_options(cfg);
  reject_unknown(cfg);

  const auto data = doge::ingest_dataset(dataset);
  const doge::KeyframeSequence seq(data, win.keyframe_rate, refiner.solver.pixel_sigma);
  doge::CalibState nominal;
  nominal.R_CI = data.calib.R_CI_nominal;
  const auto init = doge::initialize(seq, nominal, refiner.solver, refiner.window_size, win.start);
  if (!init) throw std::runtime_error("initialization failed in every window of the dataset");
  const auto result = doge::run_sequence(seq, *init, refiner);
  std::ostringstream csv;
  doge::write_refine_csv(csv, result, data, seq);
  write_text(out, csv.str());
  return 0;
}

int run_sweep_command(const CommonOptions& common, const std::vector<std::pair<std::string, std::string>>& aliases) {
  auto cfg = load_config(common, aliases);
  const auto spec = doge::experiment_from_config(cfg);
  reject_unknown(cfg);
  const auto records = doge::run_sweep(spec);
  doge::emit_report(records, spec.output);
  std::cout << doge::summary_json(doge::summarize(records));
  return 0;
}

int run_report(const std::vector<std::string>& tables, const std::string& out) {
  std::vector<doge::OutcomeRecord> records;
  for (const auto& path : tables) {
    const fs::path p = fs::is_directory(path) ? fs::path(path) / "outcomes.csv" : fs::path(path);
    auto part = doge::read_outcomes(p);
    records.insert(records.end(), part.begin(), part.end());
  }
  if (records.empty()) throw std::invalid_argument("report: the tables hold no records");
  if (!out.empty()) doge::emit_report(records, out);
  std::cout << doge::summary_json(doge::summarize(records));
  return 0;
}

void print_error(const std::string& kind, const std::string& message, const doge::ParseError* where = nullptr) {
  ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  if (where) {
    j["path"] = where->path();
    j["line"] = where->line();
    j["column"] = where->column();
  }
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gyroscope bias and camera-IMU rotation initialization"};
  app.require_subcommand(1);

  CommonOptions common;
  std::vector<std::pair<std::string, std::string>> aliases;

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset directory");
  add_common(simulate, common);
  std::string sim_out;
  std::optional<std::int64_t> sim_seed;
  std::optional<double> sim_duration, sim_prefix, sim_pixel, sim_offset;
  simulate->add_option("-o,--out", sim_out, "output dataset directory")->required();
  simulate->add_option("--seed", sim_seed, "scenario.seed");
  simulate->add_option("--duration", sim_duration, "scenario.duration, s");
  simulate->add_option("--rotation-prefix", sim_prefix, "scenario.rotation_prefix, s");
  simulate->add_option("--pixel-sigma", sim_pixel, "scenario.pixel_sigma, px");
  simulate->add_option("--offset-deg", sim_offset, "scenario.extrinsic_offset_deg");

  auto* init = app.add_subcommand("init", "solve one window and print the report as JSON");
  add_common(init, common);
  std::string init_dataset, init_out;
  bool init_search = false;
  std::optional<std::int64_t> init_window, init_start;
  std::optional<std::string> init_mode;
  init->add_option("-d,--dataset", init_dataset, "dataset directory")->required();
  init->add_option("-o,--out", init_out, "JSON output file, stdout by default");
  init->add_option("-n,--window-size", init_window, "window.size");
  init->add_option("--start", init_start, "window.start, keyframe index");
  init->add_option("--mode", init_mode, "solver.mode: none, lambda, fp or combined");
  init->add_flag("--search", init_search, "slide forward until a window succeeds");

  auto* refine = app.add_subcommand("refine", "initialize and refine window by window, CSV rows");
  add_common(refine, common);
  std::string refine_dataset, refine_out;
  std::optional<std::int64_t> refine_window;
  refine->add_option("-d,--dataset", refine_dataset, "dataset directory")->required();
  refine->add_option("-o,--out", refine_out, "CSV output file, stdout by default");
  refine->add_option("-n,--window-size", refine_window, "window.size");

  auto* sweep = app.add_subcommand("sweep", "run an experiment grid and write reports");
  add_common(sweep, common);
  std::optional<std::string> sweep_out;
  std::optional<std::int64_t> sweep_jobs, sweep_seed;
  sweep->add_option("-o,--out", sweep_out, "sweep.output, report directory");
  sweep->add_option("-j,--jobs", sweep_jobs, "sweep.jobs");
  sweep->add_option("--seed", sweep_seed, "sweep.seed");

  auto* report = app.add_subcommand("report", "aggregate outcome tables");
  std::vector<std::string> report_tables;
  std::string report_out;
  report->add_option("tables", report_tables, "outcomes.csv files or report directories")->required();
  report->add_option("-o,--out", report_out, "directory for the merged report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (simulate->parsed()) {
      alias(aliases, "scenario.seed", sim_seed);
      alias(aliases, "scenario.duration", sim_duration);
      alias(aliases, "scenario.rotation_prefix", sim_prefix);
      alias(aliases, "scenario.pixel_sigma", sim_pixel);
      alias(aliases, "scenario.extrinsic_offset_deg", sim_offset);
      return run_simulate(common, sim_out, aliases);
    }
    if (init->parsed()) {
      alias(aliases, "window.size", init_window);
      alias(aliases, "window.start", init_start);
      alias(aliases, "solver.mode", init_mode);
      return run_init(common, init_dataset, init_out, init_search, aliases);
    }
    if (refine->parsed()) {
      alias(aliases, "window.size", refine_window);
      return run_refine(common, refine_dataset, refine_out, aliases);
    }
    if (sweep->parsed()) {
      alias(aliases, "sweep.output", sweep_out);
      alias(aliases, "sweep.jobs", sweep_jobs);
      alias(aliases, "sweep.seed", sweep_seed);
      return run_sweep_command(common, aliases);
    }
    if (report->parsed()) return run_report(report_tables, report_out);
  } catch (const doge::ParseError& e) {
    print_error("parse", e.what(), &e);
    return 1;
  } catch (const std::invalid_argument& e) {
    print_error("invalid_argument", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
  return 0;
}
