// Acceptance checks. Prints one PASS or FAIL line per criterion and exits
// nonzero when any selected criterion fails.
//
//   acceptance            run all criteria
//   acceptance 3 7        run criteria 3 and 7

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "doge/bench.hpp"
#include "doge/preintegration.hpp"
#include "doge/refiner.hpp"
#include "doge/simworld.hpp"
#include "doge/solver.hpp"
#include "doge/window.hpp"
#include "test_support.hpp"

namespace {

using namespace doge;
using doge::testing::numeric_jacobian;
using doge::testing::random_rotation;
using doge::testing::random_vector;
using doge::testing::relative_error;
namespace fs = std::filesystem;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  return error_stats(std::move(v)).median;
}

int hardware_jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

// 1. Jacobians against central differences.
Verdict jacobian_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  ImuNoiseModel noise;
  double worst_bg = 0.0, worst_theta = 0.0, worst_residual = 0.0;
  for (int c = 0; c < 100; ++c) {
    std::vector<GyroSample> s;
    Vector3 omega = random_vector(rng, 0.8);
    for (int k = 0; k < 40 + c; ++k) {
      omega += random_vector(rng, 0.05);
      s.push_back({k * noise.sample_interval, omega});
    }
    const Vector3 bias = random_vector(rng, 0.03);
    const Matrix3 R_CI = random_rotation(rng);
    const auto pre = integrate(s, bias, noise);
    const std::function<Vector3(const Vector3&)> by_bias = [&](const Vector3& d) {
      return doge::testing::rotation_vector(Matrix3(pre.delta_R.transpose() * integrate(s, Vector3(bias + d), noise).delta_R));
    };
    worst_bg = std::max(worst_bg, relative_error(pre.d_R_d_bg, numeric_jacobian<3, 3>(by_bias, Vector3::Zero(), 1e-6)));

    const auto cam = to_camera_frame(pre, R_CI);
    const std::function<Vector3(const Vector3&)> by_theta = [&](const Vector3& d) {
      return doge::testing::rotation_vector(
          Matrix3(cam.delta_R.transpose() * to_camera_frame(pre, Matrix3(R_CI * exp_so3(d))).delta_R));
    };
    worst_theta = std::max(worst_theta, relative_error(cam.d_R_d_theta_right(), numeric_jacobian<3, 3>(by_theta, Vector3::Zero())));

    ScenarioConfig sc;
    sc.seed = 500 + static_cast<std::uint64_t>(c);
    sc.duration = 3.0;
    sc.rotation_prefix = 0.0;
    sc.translation_ramp = 0.01;
    const auto data = generate(sc);
    const KeyframeSequence seq(data, sc.keyframe_rate, sc.pixel_sigma);
    CalibState at;
    at.R_CI = data.calib.R_CI_nominal;
    at.b_g = random_vector(rng, 0.01);
    const auto window = seq.build_window(0, 6, at, SolverConfig{});
    const auto& pair = window.pairs[static_cast<std::size_t>(c) % window.pairs.size()];
    const auto r = residual(pair, Vector3::Zero(), Vector3::Zero());
    const std::function<Eigen::Matrix<double, 1, 1>(const Vector6&)> e = [&](const Vector6& x) {
      return Eigen::Matrix<double, 1, 1>(std::sqrt(pair_lambda(pair, x.head<3>(), x.tail<3>())));
    };
    worst_residual = std::max(worst_residual, relative_error(r.jacobian, numeric_jacobian<1, 6>(e, Vector6::Zero(), 1e-7)));
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_bg < 1e-4 && worst_theta < 1e-4 && worst_residual < 1e-4 && secs < 10.0;
  return {pass, fmt("worst relative error J_bg %.2e, J_theta %.2e, residual %.2e over 100 cases; %.1f s (limits 1e-4, 10 s)",
                    worst_bg, worst_theta, worst_residual, secs)};
}

// 2. Noiseless recovery.
Verdict noiseless_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  int ok = 0;
  double worst_b = 0.0, worst_r = 0.0;
  for (int run = 0; run < 100; ++run) {
    ScenarioConfig sc;
    sc.seed = 1000 + static_cast<std::uint64_t>(run);
    sc.duration = 3.0;
    sc.bias_magnitude = 0.03;
    sc.extrinsic_offset_deg = 10.0;
    sc.pixel_sigma = 0.0;
    sc.imu_noise = false;
    // Alternate pure rotation and general motion.
    sc.rotation_prefix = run % 2 == 0 ? 3.0 : 0.0;
    sc.translation_ramp = 0.01;
    GroundTruth truth;
    const auto data = generate(sc, &truth);
    const KeyframeSequence seq(data, 4.0, 0.5);
    CalibState nominal;
    nominal.R_CI = data.calib.R_CI_nominal;
    auto window = seq.build_window(0, 10, nominal, SolverConfig{});
    const auto report = irls_solve(window, nominal, SolverConfig{});
    const double b = (report.state.b_g - truth.initial_bias).norm();
    const double r = rad2deg(geodesic_distance(report.state.R_CI, truth.R_CI));
    worst_b = std::max(worst_b, b);
    worst_r = std::max(worst_r, r);
    ok += report.success && b < 1e-4 && r < 0.01;
  }
  const double secs = seconds_since(t0);
  return {ok >= 99 && secs < 60.0,
          fmt("%d/100 runs within 1e-4 rad/s and 0.01 deg (worst %.1e rad/s, %.1e deg); %.1f s (need >= 99, < 60 s)", ok,
              worst_b, worst_r, secs)};
}

// 3. Accuracy under pixel noise across deformation levels.
Verdict noisy_accuracy() {
  ExperimentSpec spec;
  spec.scenario.pixel_sigma = 0.5;
  spec.sequences = 15;
  spec.max_segments = 100;
  spec.window_sizes = {10};
  spec.deformations_deg = {0.0, 1.0, 5.0, 10.0, 20.0};
  spec.seed = 3;
  spec.jobs = hardware_jobs();
  const auto records = run_sweep(spec);
  const auto cells = summarize(records);
  bool pass = cells.size() == 5;
  std::string detail;
  double r0 = 0.0, b0 = 0.0, r20 = 0.0, b20 = 0.0;
  for (const auto& c : cells) {
    const double r = c.r_ci_error_deg.median, b = c.bias_error.median;
    pass = pass && c.count == 100 && r < 1.0 && b < 20.0;
    detail += fmt("%g deg: R %.3f deg, b %.1f%% (%zu/%zu solved); ", c.deformation_deg, r, b, c.r_ci_error_deg.count, c.count);
    if (c.deformation_deg == 0.0) r0 = r, b0 = b;
    if (c.deformation_deg == 20.0) r20 = r, b20 = b;
  }
  pass = pass && r20 <= 2.0 * r0 && b20 <= 2.0 * b0;
  detail += fmt("20/0 ratio R %.2f, b %.2f (limits 1 deg, 20%%, 2x)", r0 > 0 ? r20 / r0 : 0.0, b0 > 0 ? b20 / b0 : 0.0);
  return {pass, detail};
}

// 4. Outcome rates at 10 degrees with varying excitation.
Verdict robustness() {
  ExperimentSpec spec;
  spec.scenario.excitation_modulation = 0.7;
  spec.scenario.modulation_period = 40.0;
  spec.sequences = 30;
  spec.max_segments = 200;
  spec.window_sizes = {10};
  spec.deformations_deg = {10.0};
  spec.seed = 4;
  spec.jobs = hardware_jobs();
  const auto records = run_sweep(spec);
  const auto cells = summarize(records);
  if (cells.size() != 1) return {false, "expected one cell"};
  const auto& c = cells.front();
  return {c.count == 200 && c.good_pct >= 90.0 && c.non_detected_bad_pct <= 2.0,
          fmt("%zu segments: good %.2f%%, detected bad %.2f%%, non-detected bad %.2f%% (need good >= 90%%, "
              "non-detected bad <= 2%%)",
              c.count, c.good_pct, c.detected_bad_pct, c.non_detected_bad_pct)};
}

// 5. Pass-rate gate boundary.
Verdict failure_gate() {
  const SolverConfig cfg;
  const bool below = initialization_succeeded(0.799, 10.0, cfg);
  const bool at = initialization_succeeded(0.800, 10.0, cfg);
  const bool above = initialization_succeeded(0.801, 10.0, cfg);
  return {!below && at && above && cfg.epsilon_pass == 0.8,
          fmt("0.799 -> %s, 0.800 -> %s, 0.801 -> %s", below ? "pass" : "fail", at ? "pass" : "fail",
              above ? "pass" : "fail")};
}

// 6. Iterated update against batch MAP.
Verdict ieskf_equivalence() {
  std::mt19937_64 rng(106);
  double worst_state = 0.0, worst_cov = 0.0;
  int updated = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Matrix6 a;
    for (int c = 0; c < 6; ++c) a.col(c) << random_vector(rng, 0.05), random_vector(rng, 0.05);
    const Matrix6 P = a * a.transpose() + 1e-5 * Matrix6::Identity();
    const CalibState truth{random_vector(rng, 0.03), random_rotation(rng)};
    Vector6 offset;
    offset << random_vector(rng, 0.01), random_vector(rng, 0.1);
    const PriorBelief prior{truth.plus(offset), P};
    Vector6 meas_noise;
    meas_noise << random_vector(rng, 1e-3), random_vector(rng, 0.01);
    const CalibState measured = truth.plus(meas_noise);
    const int rows = 3 + trial % 4;
    const Eigen::MatrixXd W = 20.0 * Eigen::MatrixXd::Random(rows, 6);

    const ObservationModel model = [&](const CalibState& x) {
      const Vector6 d = x.minus(measured);
      Matrix6 J = Matrix6::Identity();
      J.bottomRightCorner<3, 3>() = right_jacobian_inverse(d.tail<3>());
      const Eigen::VectorXd r = W * d;
      const Eigen::MatrixXd j = W * J;
      ObservationBlocks o;
      o.cost = r.squaredNorm();
      o.gradient = j.transpose() * r;
      o.information = j.transpose() * j;
      o.count = static_cast<std::size_t>(rows);
      return o;
    };
    IeskfConfig cfg;
    cfg.max_iterations = 100;
    cfg.step_tolerance = 1e-13;
    const auto result = iterated_update(prior, model, cfg);
    updated += result.updated;

    // Batch MAP by Gauss-Newton on the stacked whitened residual with
    // numeric Jacobians.
    const Matrix6 L_inv = Eigen::LLT<Matrix6>(P).matrixL().solve(Matrix6::Identity());
    const auto stacked = [&](const CalibState& x) {
      Eigen::VectorXd s(6 + rows);
      s << L_inv * x.minus(prior.x), W * x.minus(measured);
      return s;
    };
    CalibState x = prior.x;
    Eigen::MatrixXd J(6 + rows, 6);
    for (int it = 0; it < 200; ++it) {
      const double h = 1e-6;
      for (int k = 0; k < 6; ++k) {
        const Vector6 e = h * Vector6::Unit(k);
        J.col(k) = (stacked(x.plus(e)) - stacked(x.plus(-e))) / (2.0 * h);
      }
      const Vector6 step = (J.transpose() * J).ldlt().solve(-J.transpose() * stacked(x));
      x = x.plus(step);
      if (step.norm() < 1e-14) break;
    }
    const Matrix6 cov = (J.transpose() * J).inverse();
    worst_state = std::max(worst_state, result.posterior.x.minus(x).norm());
    worst_cov = std::max(worst_cov, (result.posterior.P - cov).norm() / cov.norm());
  }
  return {updated == 20 && worst_state < 1e-6 && worst_cov < 1e-6,
          fmt("20 problems, %d updated: worst state gap %.2e, worst relative covariance gap %.2e (limits 1e-6)", updated,
              worst_state, worst_cov)};
}

// 7. Refinement through the pure-rotation prefix.
Verdict pure_rotation_convergence() {
  int wins = 0, early = 0, inits = 0;
  std::string detail;
  for (int seed = 1; seed <= 10; ++seed) {
    ScenarioConfig sc;
    sc.seed = static_cast<std::uint64_t>(seed);
    sc.duration = 50.0;
    sc.rotation_prefix = 25.0;
    sc.extrinsic_offset_deg = 10.0;
    GroundTruth truth;
    const auto data = generate(sc, &truth);
    RefinerConfig rc;
    const KeyframeSequence seq(data, sc.keyframe_rate, rc.solver.pixel_sigma);
    CalibState nominal;
    nominal.R_CI = data.calib.R_CI_nominal;
    const auto init = initialize(seq, nominal, rc.solver, rc.window_size);
    if (!init) continue;
    ++inits;
    double final_r[2] = {0, 0}, final_b[2] = {0, 0};
    double t_below = -1.0;
    for (int variant = 0; variant < 2; ++variant) {
      rc.use_prior = variant == 0;
      const auto result = run_sequence(seq, *init, rc);
      for (const auto& w : result.windows) {
        const double r = rad2deg(geodesic_distance(w.belief.x.R_CI, truth.R_CI));
        if (variant == 0 && t_below < 0.0 && r < 1.0) t_below = w.t;
        final_r[variant] = r;
        final_b[variant] = (w.belief.x.b_g - truth.initial_bias).norm();
      }
    }
    early += t_below >= 0.0 && t_below < sc.rotation_prefix;
    const bool win = final_r[0] < final_r[1] && final_b[0] < final_b[1];
    wins += win;
    detail += fmt("s%d %.2f/%.2f deg%s; ", seed, final_r[0], final_r[1], win ? "" : " (lost)");
  }
  return {inits == 10 && early == 10 && wins >= 8,
          fmt("%d/10 initialized, %d/10 below 1 deg before translation, filter better on R and b in %d/10 "
              "(need 10, 10, 8); final R with/without prior: ",
              inits, early, wins) +
              detail};
}

// 8. Estimation time of a 10-keyframe window.
Verdict efficiency() {
  std::vector<double> build, estimation, reintegration;
  std::size_t features = 0, frames = 0;
  for (int run = 0; run < 30; ++run) {
    ScenarioConfig sc;
    sc.seed = 800 + static_cast<std::uint64_t>(run);
    sc.duration = 4.0;
    sc.rotation_prefix = run % 2 == 0 ? 4.0 : 0.0;
    sc.translation_ramp = 0.01;
    sc.max_features = 150;
    const auto data = generate(sc);
    const KeyframeSequence seq(data, 4.0, sc.pixel_sigma);
    CalibState nominal;
    nominal.R_CI = data.calib.R_CI_nominal;
    const auto t0 = std::chrono::steady_clock::now();
    auto window = seq.build_window(0, 10, nominal, SolverConfig{});
    build.push_back(1e3 * seconds_since(t0));
    const auto report = irls_solve(window, nominal, SolverConfig{});
    estimation.push_back(report.estimation_ms);
    reintegration.push_back(report.reintegration_ms);
    features += data.features.size();
    frames += static_cast<std::size_t>(data.features.back().frame_id + 1);
  }
  const double med = median(estimation);
  return {med < 150.0, fmt("median over 30 windows (%.0f features/frame): matching+preintegration %.2f ms, "
                           "estimation %.2f ms (of which reintegration %.2f ms), total %.2f ms (limit 150 ms)",
                           static_cast<double>(features) / static_cast<double>(frames), median(build), med,
                           median(reintegration), median(build) + med)};
}

// 9. Gate pass rate and covariance consistency over repeated noise draws.
Verdict statistical_consistency() {
  std::vector<Vector6> errors;
  Matrix6 predicted = Matrix6::Zero();
  double pass_sum = 0.0;
  int solved = 0;
  for (int run = 1; run <= 200; ++run) {
    ScenarioConfig sc;
    sc.seed = 1;
    sc.noise_seed = 1000 + static_cast<std::uint64_t>(run);
    sc.duration = 6.0;
    sc.rotation_prefix = 0.0;
    sc.translation_amplitude = 1.5;
    sc.translation_ramp = 0.01;
    GroundTruth truth;
    const auto data = generate(sc, &truth);
    const SolverConfig cfg;
    const KeyframeSequence seq(data, 4.0, cfg.pixel_sigma);
    CalibState nominal;
    nominal.R_CI = data.calib.R_CI_nominal;
    auto window = seq.build_window(0, 10, nominal, cfg);
    const auto report = irls_solve(window, nominal, cfg);
    if (!report.success) continue;
    ++solved;
    pass_sum += report.pass_rate;
    errors.push_back(report.state.minus(CalibState{truth.initial_bias, truth.R_CI}));
    predicted += report.covariance;
  }
  if (solved < 2) return {false, "too few successful solves"};
  predicted /= solved;
  Vector6 mean = Vector6::Zero();
  for (const auto& e : errors) mean += e;
  mean /= static_cast<double>(errors.size());
  Matrix6 empirical = Matrix6::Zero();
  for (const auto& e : errors) empirical += (e - mean) * (e - mean).transpose();
  empirical /= static_cast<double>(errors.size() - 1);
  double lo = 1e300, hi = 0.0;
  for (int i = 0; i < 6; ++i) {
    const double ratio = empirical(i, i) / predicted(i, i);
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  const double pass_rate = pass_sum / solved;
  return {solved == 200 && std::abs(pass_rate - 0.95) <= 0.02 && lo >= 0.5 && hi <= 2.0,
          fmt("%d/200 solved; mean gate pass rate %.4f (need 0.95 +- 0.02); empirical/predicted variance ratio in "
              "[%.2f, %.2f] (need within [0.5, 2])",
              solved, pass_rate, lo, hi)};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 10. Byte-identical sweep reports.
Verdict determinism() {
  ExperimentSpec spec;
  spec.sequences = 2;
  spec.max_segments = 6;
  spec.window_sizes = {5, 10};
  spec.deformations_deg = {0.0, 10.0};
  spec.repetitions = 2;
  spec.seed = 10;
  const fs::path base = fs::temp_directory_path() / "doge_acceptance_determinism";
  fs::remove_all(base);
  spec.jobs = hardware_jobs();
  emit_report(run_sweep(spec), base / "first");
  emit_report(run_sweep(spec), base / "second");
  bool same = true;
  std::string sizes;
  for (const char* f : {"outcomes.csv", "summary.json"}) {
    const auto a = slurp(base / "first" / f), b = slurp(base / "second" / f);
    same = same && !a.empty() && a == b;
    sizes += fmt("%s %zu bytes %s; ", f, a.size(), a == b ? "identical" : "DIFFERENT");
  }
  return {same, sizes + "two consecutive runs, same seed"};
}

struct Criterion {
  int id;
  const char* name;
  Verdict (*run)();
};

const std::vector<Criterion> kCriteria{
    {1, "jacobian suite", jacobian_suite},
    {2, "noiseless recovery", noiseless_recovery},
    {3, "noisy accuracy", noisy_accuracy},
    {4, "robustness", robustness},
    {5, "failure gate", failure_gate},
    {6, "ieskf equivalence", ieskf_equivalence},
    {7, "pure-rotation convergence", pure_rotation_convergence},
    {8, "efficiency", efficiency},
    {9, "statistical consistency", statistical_consistency},
    {10, "determinism", determinism},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : kCriteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << c.id << " " << c.name << ": " << v.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
