#include "doge/refiner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Eigenvalues>

namespace doge {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

// d/dd of (x [+] d) [-] y at d = 0, with r = x [-] y.
Matrix6 boxminus_jacobian(const Vector6& r) {
  Matrix6 j = Matrix6::Identity();
  j.bottomRightCorner<3, 3>() = right_jacobian_inverse(r.tail<3>());
  return j;
}

std::size_t usable_pairs(const WindowProblem& window) {
  return static_cast<std::size_t>(std::count_if(window.pairs.begin(), window.pairs.end(),
                                                [](const PairProblem& p) { return !p.excluded; }));
}

// A pair spanning g keyframes is seen by n - g consecutive windows; scaling
// its variance by that count keeps the chain from counting it repeatedly.
void share_information(WindowProblem& window, std::size_t n) {
  const auto index_of = [&](int frame_id) {
    const auto it = std::find(window.keyframe_ids.begin(), window.keyframe_ids.end(), frame_id);
    return static_cast<std::size_t>(it - window.keyframe_ids.begin());
  };
  for (auto& pair : window.pairs) {
    const std::size_t gap = index_of(pair.frame_j) - index_of(pair.frame_i);
    pair.sigma2_lambda *= static_cast<double>(n > gap ? n - gap : 1);
  }
}

}  // namespace

void PriorBelief::validate() const {
  if (!P.allFinite() || !x.b_g.allFinite() || !x.R_CI.allFinite()) {
    throw std::invalid_argument("PriorBelief: non-finite state or covariance");
  }
  const double scale = std::max(P.cwiseAbs().maxCoeff(), 1e-300);
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw std::invalid_argument("PriorBelief: covariance is not symmetric");
  }
  const Eigen::SelfAdjointEigenSolver<Matrix6> eig(P, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues()(0) < -1e-12 * scale) throw std::invalid_argument("PriorBelief: covariance is not PSD");
}

PriorBelief propagate_prior(const PriorBelief& prev, std::span<const double> keyframe_times,
                            const ImuNoiseModel& noise, std::size_t window_size) {
  if (window_size < 2) throw std::invalid_argument("propagate_prior: window size must be >= 2");
  double elapsed = 0.0;
  for (std::size_t i = 1; i < keyframe_times.size(); ++i) {
    const double dt = keyframe_times[i] - keyframe_times[i - 1];
    if (!(dt >= 0.0)) throw std::invalid_argument("propagate_prior: keyframe times not monotone");
    elapsed += dt;
  }
  PriorBelief next = prev;
  const double sigma2 = noise.gyro_random_walk * noise.gyro_random_walk;
  next.P.topLeftCorner<3, 3>().diagonal().array() += sigma2 * elapsed / static_cast<double>(window_size);
  return next;
}

void IeskfConfig::validate() const {
  if (max_iterations < 1 || divergence_limit < 1) throw std::invalid_argument("IeskfConfig: counts must be >= 1");
  if (!(step_tolerance >= 0.0)) throw std::invalid_argument("IeskfConfig: negative step tolerance");
}

IeskfResult iterated_update(const PriorBelief& prior, const ObservationModel& model, const IeskfConfig& config) {
  config.validate();
  prior.validate();
  IeskfResult out;
  out.posterior = prior;

  const Eigen::LDLT<Matrix6> prior_ldlt(prior.P);
  if (prior_ldlt.info() != Eigen::Success || !(prior_ldlt.vectorD().minCoeff() > 0.0)) {
    throw std::invalid_argument("iterated_update: prior covariance is not positive definite");
  }
  const Matrix6 info_prior = prior_ldlt.solve(Matrix6::Identity());

  CalibState x = prior.x;
  ObservationBlocks obs = model(x);
  if (obs.count == 0) {
    out.diagnostic = "no observations";
    return out;
  }
  auto objective = [&](const CalibState& s, const ObservationBlocks& o) {
    const Vector6 r0 = s.minus(prior.x);
    return r0.dot(info_prior * r0) + o.cost;
  };
  auto normal_matrix = [&](const Vector6& r0, const ObservationBlocks& o, Vector6* rhs) {
    const Matrix6 j = boxminus_jacobian(r0);
    if (rhs) *rhs = j.transpose() * info_prior * r0 + o.gradient;
    return Matrix6(j.transpose() * info_prior * j + o.information);
  };

  double cost = objective(x, obs);
  int increases = 0;
  for (int it = 0; it < config.max_iterations; ++it) {
    Vector6 rhs;
    const Matrix6 a = normal_matrix(x.minus(prior.x), obs, &rhs);
    const Vector6 step = a.ldlt().solve(-rhs);
    if (!step.allFinite()) {
      out.diagnostic = "singular normal equations";
      return out;
    }
    x = x.plus(step);
    x.R_CI = project_to_so3(x.R_CI);
    obs = model(x);
    ++out.iterations;
    const double next = objective(x, obs);
    // Rounding-level changes near the optimum are not divergence.
    increases = next > cost + 1e-10 * std::abs(cost) ? increases + 1 : 0;
    cost = next;
    if (increases >= config.divergence_limit) {
      out.diagnostic = "cost increased for " + std::to_string(increases) + " consecutive iterations";
      return out;
    }
    if (step.norm() < config.step_tolerance) {
      out.converged = true;
      break;
    }
  }

  const Matrix6 a = normal_matrix(x.minus(prior.x), obs, nullptr);
  const Eigen::SelfAdjointEigenSolver<Matrix6> eig(0.5 * (a + a.transpose()));
  if (!(eig.eigenvalues()(0) > 0.0)) {
    out.diagnostic = "posterior information is not positive definite";
    return out;
  }
  out.posterior.x = x;
  out.posterior.P = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                    eig.eigenvectors().transpose();
  out.posterior.P = 0.5 * (out.posterior.P + out.posterior.P.transpose()).eval();
  out.cost = cost;
  out.updated = true;
  return out;
}

ObservationBlocks window_observation(const WindowProblem& window, const CalibState& x,
                                     const WindowUpdateOptions& options) {
  const Vector6 d = x.minus(window.linearization);
  ObservationBlocks out;
  for (const auto& pair : window.pairs) {
    if (pair.excluded) continue;
    const PairLinearization lin = linearize_pair(pair, d.head<3>(), d.tail<3>(), options.noise_scale);
    const double s = pair.sigma2_lambda * options.variance_scale;
    out.cost += lin.cost / s;
    out.gradient += lin.gradient / s;
    out.information += lin.information / s;
    ++out.count;
  }
  // From the correction coordinates to a perturbation x [+] d.
  const Matrix6 j = boxminus_jacobian(d);
  out.gradient = j.transpose() * out.gradient;
  out.information = j.transpose() * out.information * j;
  return out;
}

IeskfResult ieskf_update(const PriorBelief& prior, const WindowProblem& window,
                         const WindowUpdateOptions& options) {
  return iterated_update(
      prior, [&](const CalibState& x) { return window_observation(window, x, options); }, options.ieskf);
}

void RefinerConfig::validate() const {
  solver.validate();
  ieskf.validate();
  if (window_size < 2) throw std::invalid_argument("RefinerConfig: window size must be >= 2");
  if (!(parallax_handoff_deg > 0.0)) throw std::invalid_argument("RefinerConfig: handoff parallax must be positive");
  if (gate_passes < 1) throw std::invalid_argument("RefinerConfig: gate_passes must be >= 1");
}

std::string_view to_string(WindowStatus status) {
  switch (status) {
    case WindowStatus::kInitialized: return "initialized";
    case WindowStatus::kUpdated: return "updated";
    case WindowStatus::kSkipped: return "skipped";
    case WindowStatus::kDiverged: return "diverged";
    case WindowStatus::kHandoff: return "handoff";
  }
  return "unknown";
}

std::optional<Initialization> initialize(const KeyframeSequence& sequence, const CalibState& nominal,
                                         const SolverConfig& config, std::size_t window_size,
                                         std::size_t start) {
  Initialization init;
  for (std::size_t first = start; first + window_size <= sequence.size(); ++first) {
    WindowProblem window = sequence.build_window(first, window_size, nominal, config);
    init.report = irls_solve(window, nominal, config);
    ++init.attempts;
    if (init.report.success) {
      init.first_keyframe = first;
      return init;
    }
  }
  return std::nullopt;
}

SequenceResult run_sequence(const KeyframeSequence& sequence, const Initialization& init,
                            const RefinerConfig& config) {
  config.validate();
  if (!init.report.success) throw std::invalid_argument("run_sequence: initialization did not succeed");
  const std::size_t n = config.window_size;
  if (init.first_keyframe + n > sequence.size()) {
    throw std::out_of_range("run_sequence: initialization window outside the sequence");
  }

  SequenceResult result;
  WindowRecord first;
  first.first_keyframe = init.first_keyframe;
  first.t = sequence[init.first_keyframe + n - 1].t;
  first.belief = {init.report.state, init.report.covariance};
  first.status = WindowStatus::kInitialized;
  first.estimation_ms = init.report.estimation_ms;
  result.windows.push_back(first);
  PriorBelief belief = first.belief;

  const bool compensate = config.solver.noise_compensation && config.solver.mode != WeightingMode::kNone;
  const std::size_t end =
      config.keyframe_limit > 0 ? std::min(config.keyframe_limit, sequence.size()) : sequence.size();
  for (std::size_t k = init.first_keyframe + 1; k + n <= end; ++k) {
    const auto start = std::chrono::steady_clock::now();
    WindowRecord rec;
    rec.index = result.windows.size();
    rec.first_keyframe = k;
    rec.t = sequence[k + n - 1].t;

    std::vector<double> times;
    for (std::size_t i = k - 1; i < k + n; ++i) times.push_back(sequence[i].t);
    const PriorBelief prior = config.use_prior ? propagate_prior(belief, times, sequence.noise(), n) : belief;

    WindowProblem window = sequence.build_window(k, n, prior.x, config.solver);
    rec.parallax_deg = window.span_pair ? median_parallax_deg(*window.span_pair) : 0.0;
    if (rec.parallax_deg > config.parallax_handoff_deg && config.stop_at_handoff) {
      rec.belief = belief;
      rec.status = WindowStatus::kHandoff;
      rec.estimation_ms = elapsed_ms(start);
      result.windows.push_back(rec);
      result.handed_off = true;
      break;
    }
    result.handed_off = result.handed_off || rec.parallax_deg > config.parallax_handoff_deg;

    if (config.use_prior) {
      for (auto& pair : window.pairs) {
        pair.reset_weights();
        pair.sigma2_lambda = 1.0;
        pair.excluded = pair.matches.size() < static_cast<std::size_t>(config.solver.min_active);
      }
      for (int pass = 0; pass < config.gate_passes; ++pass) gate_window(window, config.solver);
      if (usable_pairs(window) < 2) {
        belief = prior;
        rec.status = WindowStatus::kSkipped;
        rec.diagnostic = "fewer than two usable keyframe pairs";
      } else {
        WindowUpdateOptions options;
        options.ieskf = config.ieskf;
        options.noise_scale = compensate ? estimate_noise_scale(window) : 0.0;
        if (config.deflate) {
          const FisherResult fisher = fisher_covariance(window, config.solver);
          if (fisher.ok) {
            options.variance_scale = std::max(1.0, (fisher.information * fisher.covariance).trace() / 6.0);
          }
        }
        if (config.share_overlap) share_information(window, n);
        rec.variance_scale = options.variance_scale;
        const IeskfResult update = ieskf_update(prior, window, options);
        rec.iterations = update.iterations;
        rec.diagnostic = update.diagnostic;
        belief = update.updated ? update.posterior : prior;
        rec.status = update.updated ? WindowStatus::kUpdated : WindowStatus::kDiverged;
      }
    } else {
      const SolveReport report = irls_solve(window, belief.x, config.solver);
      rec.iterations = report.loops;
      if (report.success) {
        belief = {report.state, report.covariance};
        rec.status = WindowStatus::kUpdated;
      } else {
        rec.status = WindowStatus::kSkipped;
        rec.diagnostic = report.failure_reason;
      }
    }
    rec.belief = belief;
    rec.estimation_ms = elapsed_ms(start);
    result.windows.push_back(rec);
  }
  return result;
}

}  // namespace doge
