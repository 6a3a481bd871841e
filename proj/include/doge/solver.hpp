#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "doge/epipolar.hpp"
#include "doge/manifold.hpp"
#include "doge/preintegration.hpp"

namespace doge {

enum class WeightingMode {
  kNone,         ///< plain eigenvalue residuals
  kLambda,       ///< per-pair eigenvalue variance only
  kFeaturePair,  ///< per-feature weights and chi-square culling only
  kCombined,     ///< both
};

std::string_view to_string(WeightingMode mode);
WeightingMode weighting_mode_from_string(std::string_view name);

struct SolverConfig {
  int max_loops = 6;
  int lm_max_iters = 20;
  double chi2_alpha = 0.05;
  double epsilon_pass = 0.8;
  double weight_min = 1e-6;
  double weight_max = 1e6;
  int covisibility_min = 20;
  int min_active = 5;
  double cauchy_scale = 1.0;
  double reintegration_threshold = 1e-3;   ///< rad/s
  double max_condition = 1e8;
  double cost_tolerance = 1e-8;
  double step_tolerance = 1e-7;            ///< on |[d_bg; d_theta]| of one loop
  double pixel_sigma = 0.5;                ///< assumed feature noise, px
  double sigma2_floor = 1e-16;
  double repeated_eigen_tolerance = 1e-6;  ///< (l_mid - l_min) / l_max
  double max_bias_norm = 1.0;              ///< sanity bound, rad/s
  bool noise_compensation = true;          ///< in the weighted loops
  double compensation_snr = 10.0;          ///< minimum median translation_snr of a compensated window
  WeightingMode mode = WeightingMode::kCombined;

  void validate() const;
};

/// Gyroscope bias and camera-from-IMU rotation.
struct CalibState {
  Vector3 b_g = Vector3::Zero();
  Matrix3 R_CI = Matrix3::Identity();

  /// x [+] d with d = [d_bg; d_theta] and R_CI <- R_CI Exp(d_theta).
  CalibState plus(const Vector6& delta) const;
  /// this [-] other, the inverse of plus.
  Vector6 minus(const CalibState& other) const;
};

/// One sliding window of keyframes and the pair set built over it.
struct WindowProblem {
  std::vector<int> keyframe_ids;
  std::vector<double> keyframe_times;
  std::vector<PairProblem> pairs;
  std::vector<GyroSample> gyro;   ///< covers the window, kept for reintegration
  ImuNoiseModel noise;
  std::optional<PairProblem> span_pair;   ///< oldest/newest keyframes, for parallax
  CalibState linearization;               ///< state the pairs are expressed at

  std::size_t correspondence_count() const;
};

struct SolveReport {
  bool converged = false;
  bool success = false;
  CalibState state;
  Matrix6 covariance = Matrix6::Zero();
  double pass_rate = 0.0;
  double condition_number = 0.0;
  std::vector<double> loop_costs;
  int loops = 0;
  int lm_iterations = 0;
  int reintegrations = 0;
  std::size_t pairs_used = 0;
  double estimation_ms = 0.0;     ///< includes reintegration
  double reintegration_ms = 0.0;
  std::string failure_reason;
};

/// Scalar residual sqrt(lambda_min) of one pair and its 1x6 Jacobian with
/// respect to [d_bg; d_theta].
struct PairResidual {
  double e = 0.0;
  double lambda = 0.0;
  Vector3 v = Vector3::UnitX();
  Eigen::Matrix<double, 1, 6> jacobian = Eigen::Matrix<double, 1, 6>::Zero();
};

/// Gauss-Newton blocks of one pair. The per-feature residuals v^T n_k are
/// stacked with the pair's translation direction v treated as a nuisance on
/// the unit sphere; information is its Schur complement, gradient is
/// sum_k e_k de_k/dx. Cost lambda = sum_k e_k^2.
///
/// With noise compensation c > 0 (and pair.compensate set) the translation direction is the smallest
/// eigenvector of M - c sum_k N_k, N_k being the covariance of n_k implied by
/// the bearing covariances, and the cost is lambda - c sum_k v^T N_k v. This
/// removes the first-order pull of the noise term towards states that shrink
/// it (the estimate is otherwise biased by O(sigma^2) regardless of the
/// number of features).
struct PairLinearization {
  double lambda = 0.0;
  double noise = 0.0;  ///< sum_k v^T N_k v, the noise energy the bearing model predicts
  double cost = 0.0;   ///< lambda - noise_scale * noise
  Vector3 v = Vector3::UnitX();
  Vector3 eigenvalues = Vector3::Zero();
  Vector6 gradient = Vector6::Zero();
  Matrix6 information = Matrix6::Zero();
  PairResidual residual;
};

PairLinearization linearize_pair(const PairProblem& pair, const Vector3& d_bg,
                                 const Vector3& d_theta, double noise_scale = 0.0);

PairResidual residual(const PairProblem& pair, const Vector3& d_bg, const Vector3& d_theta);

/// Lambda-residual cost only (no Jacobians).
double pair_lambda(const PairProblem& pair, const Vector3& d_bg, const Vector3& d_theta,
                   double noise_scale = 0.0);

/// Middle eigenvalue of M over the noise energy the bearing covariances
/// predict along its eigenvector, at the pair's linearization. Near one when
/// the normals are noise only (no translation), large when the translation
/// direction is well determined.
double translation_snr(const PairProblem& pair);

/// Share of the modeled noise energy actually present in the window,
/// sum lambda / sum noise over used pairs marked for compensation, clamped to [0, 1]. Noise-free data
/// gives 0 (no compensation), correctly modeled noise close to 1.
double estimate_noise_scale(const WindowProblem& window);

/// Variance of sqrt(lambda_min) from the bearing covariances and the
/// preintegration covariance, floored at sigma2_floor. Uses weighted f_j and
/// w^2 cov_j. Where lambda < 1e-18 the residual direction is undefined and
/// each feature contributes equally.
double lambda_variance(const PairProblem& pair, const Vector3& d_bg, const Vector3& d_theta,
                       double sigma2_floor = 1e-16);

/// Upper (1 - alpha) quantile of the chi-square distribution.
double chi2_threshold(double alpha, int dof = 1);

struct FeatureGate {
  std::vector<double> residuals;   ///< e_k = v^T n_k with unweighted f_j
  std::vector<double> sigmas;      ///< sigma_k
  std::vector<double> weights;     ///< 1 / sigma_k, clamped
  std::vector<std::uint8_t> inliers;
  std::size_t passed = 0;
};

/// Per-feature residuals, standard deviations, weights and chi-square inlier
/// set for eigenvector v at the corrected rotation.
FeatureGate fp_weights(const PairProblem& pair, const Vector3& v, const Vector3& d_bg,
                       const Vector3& d_theta, const SolverConfig& config);

struct GateSummary {
  std::size_t passed = 0;
  std::size_t total = 0;
};

/// Gates every pair at its current linearization and refreshes its
/// eigenvalue variance, exclusion and compensation flags. Feature weights and inlier sets
/// are adopted only in the feature-pair modes; pairs whose smallest
/// eigenvalue is repeated keep their previous weights.
GateSummary gate_window(WindowProblem& window, const SolverConfig& config);

/// Refreshes each pair's camera-frame preintegration at state. Pairs whose
/// integration bias is further than the threshold from state.b_g are
/// reintegrated from window.gyro, the rest are corrected to first order.
/// Returns the number of reintegrated pairs.
int relinearize(WindowProblem& window, const CalibState& state, double reintegration_threshold);

/// Pass-rate and conditioning gate.
bool initialization_succeeded(double pass_rate, double condition_number,
                              const SolverConfig& config);

struct FisherResult {
  Matrix6 information = Matrix6::Zero();         ///< Gauss-Newton Fisher information
  Matrix6 fisher_covariance = Matrix6::Zero();   ///< its inverse
  Matrix6 gradient_covariance = Matrix6::Zero(); ///< noise covariance of the stacked gradient
  Matrix6 covariance = Matrix6::Zero();          ///< I^-1 G I^-1
  double noise_scale = 0.0;
  double condition_number = 0.0;
  bool ok = false;
};

/// Gauss-Newton Fisher information of the window at its current
/// linearization, sum_p H_p / sigma_p^2 over non-excluded pairs, and its
/// inverse.
FisherResult fisher_covariance(const WindowProblem& window, const SolverConfig& config);

/// Relinearizes the window at state first.
FisherResult fisher_covariance(WindowProblem& window, const CalibState& state,
                               const SolverConfig& config);

/// Iteratively reweighted estimation of bias and extrinsic rotation.
SolveReport irls_solve(WindowProblem& window, const CalibState& init,
                       const SolverConfig& config = {});

}  // namespace doge
