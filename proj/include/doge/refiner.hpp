#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "doge/solver.hpp"
#include "doge/window.hpp"

namespace doge {

/// Gaussian belief over [b_g; theta_CI]. P is expressed in the tangent space
/// at x (bias block rad^2/s^2, orientation block rad^2).
struct PriorBelief {
  CalibState x;
  Matrix6 P = Matrix6::Identity();

  /// Throws std::invalid_argument unless P is finite, symmetric and PSD.
  void validate() const;
};

/// Next window's prior: the mean is kept and the bias block grows by
/// sigma_bg^2 * sum_i dt_i / N. keyframe_times holds the keyframe that just
/// slid out followed by the window's keyframes, so the first interval is the
/// one between the slid-out keyframe and the oldest one kept.
PriorBelief propagate_prior(const PriorBelief& prev, std::span<const double> keyframe_times,
                            const ImuNoiseModel& noise, std::size_t window_size);

/// Observation term of the posterior at a state, in information form around
/// a perturbation x [+] d: cost(d) ~ cost + 2 g^T d + d^T H d.
struct ObservationBlocks {
  double cost = 0.0;
  Vector6 gradient = Vector6::Zero();
  Matrix6 information = Matrix6::Zero();
  std::size_t count = 0;   ///< number of observations; zero means none
};

using ObservationModel = std::function<ObservationBlocks(const CalibState&)>;

struct IeskfConfig {
  int max_iterations = 10;
  double step_tolerance = 1e-8;
  int divergence_limit = 3;   ///< consecutive cost increases before giving up

  void validate() const;
};

struct IeskfResult {
  PriorBelief posterior;
  int iterations = 0;
  bool converged = false;
  bool updated = false;       ///< false when the prior was returned unchanged
  double cost = 0.0;          ///< posterior objective at the final iterate
  std::string diagnostic;
};

/// Iterated error-state update on the manifold. Each iteration solves
/// (J^T P^-1 J + H) d = -(J^T P^-1 r0 + g) with r0 = x [-] x_prior and
/// J = diag(I, Jr^-1(r0_theta)), then sets x <- x [+] d. Stops when |d| falls
/// below the step tolerance or after max_iterations; the posterior covariance
/// is the inverse of the same matrix at the final iterate. A model without
/// observations returns the prior unchanged, as does divergence.
IeskfResult iterated_update(const PriorBelief& prior, const ObservationModel& model,
                            const IeskfConfig& config = {});

struct WindowUpdateOptions {
  IeskfConfig ieskf;
  double noise_scale = 0.0;      ///< noise compensation share, see estimate_noise_scale
  double variance_scale = 1.0;   ///< multiplies every pair variance
};

/// Weighted eigenvalue residuals of the window's non-excluded pairs at
/// state x, evaluated through the first-order correction about the window's
/// linearization point. Weights, inlier sets and pair variances are used as
/// they are.
ObservationBlocks window_observation(const WindowProblem& window, const CalibState& x,
                                     const WindowUpdateOptions& options = {});

/// Iterated update with the window's eigenvalue residuals as observations.
IeskfResult ieskf_update(const PriorBelief& prior, const WindowProblem& window,
                         const WindowUpdateOptions& options = {});

struct RefinerConfig {
  SolverConfig solver;
  IeskfConfig ieskf;
  std::size_t window_size = 10;
  double parallax_handoff_deg = 1.0;
  bool use_prior = true;          ///< false re-solves each window from the last estimate
  bool stop_at_handoff = true;
  bool deflate = true;            ///< scale pair variances by the window's sandwich/Fisher ratio
  bool share_overlap = true;      ///< split each pair's information over the windows that contain it
  int gate_passes = 2;
  std::size_t keyframe_limit = 0;  ///< windows end before this keyframe; 0 for the whole sequence

  void validate() const;
};

enum class WindowStatus {
  kInitialized,   ///< the initializing solve
  kUpdated,
  kSkipped,       ///< degenerate window, belief carried over
  kDiverged,      ///< update gave up, belief carried over
  kHandoff,       ///< enough parallax, refinement ends here
};

std::string_view to_string(WindowStatus status);

/// Belief after one window.
struct WindowRecord {
  std::size_t index = 0;            ///< 0 for the initializing window
  std::size_t first_keyframe = 0;
  double t = 0.0;                   ///< time of the newest keyframe, s
  PriorBelief belief;
  WindowStatus status = WindowStatus::kUpdated;
  double parallax_deg = 0.0;        ///< median parallax between oldest and newest keyframe
  double variance_scale = 1.0;
  int iterations = 0;
  double estimation_ms = 0.0;
  std::string diagnostic;
};

struct Initialization {
  std::size_t first_keyframe = 0;
  SolveReport report;
  int attempts = 0;
};

/// Solves windows of window_size keyframes starting at keyframe `start`,
/// sliding by one, until a solve succeeds. nullopt if none does.
std::optional<Initialization> initialize(const KeyframeSequence& sequence, const CalibState& nominal,
                                         const SolverConfig& config, std::size_t window_size,
                                         std::size_t start = 0);

struct SequenceResult {
  std::vector<WindowRecord> windows;
  bool handed_off = false;
};

/// Refines the initialization window by window, sliding by one keyframe.
/// Each window is built at the propagated prior mean, gated, and used in an
/// iterated update (or, without the prior, re-solved from the last estimate).
/// Refinement ends at the first window whose parallax exceeds the handoff
/// threshold when stop_at_handoff is set, otherwise at the last window.
SequenceResult run_sequence(const KeyframeSequence& sequence, const Initialization& init,
                            const RefinerConfig& config);

}  // namespace doge
