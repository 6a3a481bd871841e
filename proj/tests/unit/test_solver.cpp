#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "doge/simworld.hpp"
#include "doge/solver.hpp"
#include "doge/window.hpp"
#include "test_support.hpp"

namespace doge {
namespace {

using testing::numeric_jacobian;
using testing::random_vector;
using testing::relative_error;

struct Fixture {
  Dataset data;
  GroundTruth truth;
  std::optional<KeyframeSequence> seq;
  CalibState true_state;
  CalibState nominal;
};

Fixture make_fixture(std::uint64_t seed, bool noisy, double prefix = 0.0, double duration = 4.0) {
  ScenarioConfig sc;
  sc.seed = seed;
  sc.duration = duration;
  sc.rotation_prefix = prefix;
  sc.translation_ramp = 0.01;
  sc.translation_amplitude = 1.0;
  if (!noisy) {
    sc.pixel_sigma = 0.0;
    sc.imu_noise = false;
  }
  Fixture f;
  f.data = generate(sc, &f.truth);
  f.seq.emplace(f.data, sc.keyframe_rate, 0.5);
  f.true_state = {f.truth.initial_bias, f.truth.R_CI};
  f.nominal.R_CI = f.data.calib.R_CI_nominal;
  return f;
}

// Upper alpha quantile of chi-square with one degree of freedom, from the
// normal tail by bisection on erfc.
double chi2_one_dof_quantile(double alpha) {
  double lo = 0.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (std::erfc(mid / std::sqrt(2.0)) > alpha ? lo : hi) = mid;
  }
  return lo * lo;
}

TEST(Solver, CalibStatePlusMinus) {
  std::mt19937_64 rng(31);
  CalibState x{random_vector(rng, 0.1), testing::random_rotation(rng)};
  Vector6 d;
  d << random_vector(rng, 0.01), random_vector(rng, 0.3);
  EXPECT_LT((x.plus(d).minus(x) - d).norm(), 1e-12);
  EXPECT_LT(x.minus(x).norm(), 1e-15);
}

TEST(Solver, CostGradientMatchesFiniteDifferences) {
  auto f = make_fixture(3, true);
  auto window = f.seq->build_window(0, 8, f.nominal, SolverConfig{});
  for (const double scale : {0.0, 0.7}) {
    for (auto& pair : window.pairs) {
      pair.compensate = scale > 0.0;
      const Vector3 bg(1e-3, -2e-3, 5e-4), th(2e-3, 1e-3, -3e-3);
      const auto lin = linearize_pair(pair, bg, th, scale);
      const std::function<Eigen::Matrix<double, 1, 1>(const Vector6&)> cost = [&](const Vector6& x) {
        return Eigen::Matrix<double, 1, 1>(pair_lambda(pair, Vector3(bg + x.head<3>()), Vector3(th + x.tail<3>()), scale));
      };
      const Eigen::Matrix<double, 1, 6> numeric = numeric_jacobian<1, 6>(cost, Vector6::Zero(), 1e-7);
      EXPECT_LT(relative_error(Eigen::Matrix<double, 1, 6>(2.0 * lin.gradient.transpose()), numeric), 1e-4)
          << "pair " << pair.frame_i << "-" << pair.frame_j << " scale " << scale;
      EXPECT_NEAR(lin.cost, cost(Vector6::Zero())(0), 1e-12 * std::max(1.0, lin.lambda));
    }
  }
}

TEST(Solver, ResidualJacobianMatchesFiniteDifferences) {
  auto f = make_fixture(4, true);
  auto window = f.seq->build_window(2, 8, f.nominal, SolverConfig{});
  for (const auto& pair : window.pairs) {
    const auto r = residual(pair, Vector3::Zero(), Vector3::Zero());
    ASSERT_GT(r.lambda, 0.0);
    const std::function<Eigen::Matrix<double, 1, 1>(const Vector6&)> e = [&](const Vector6& x) {
      return Eigen::Matrix<double, 1, 1>(std::sqrt(pair_lambda(pair, x.head<3>(), x.tail<3>())));
    };
    EXPECT_LT(relative_error(r.jacobian, numeric_jacobian<1, 6>(e, Vector6::Zero(), 1e-7)), 1e-4);
  }
}

TEST(Solver, InformationIsHalfHessianAtNoiselessTruth) {
  auto f = make_fixture(5, false);
  auto window = f.seq->build_window(0, 6, f.true_state, SolverConfig{});
  for (const auto& pair : window.pairs) {
    const auto lin = linearize_pair(pair, Vector3::Zero(), Vector3::Zero());
    EXPECT_LT(lin.lambda, 1e-20);
    const double h = 1e-4;
    Matrix6 hess;
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) {
        auto at = [&](double si, double sj) {
          Vector6 x = Vector6::Zero();
          x(i) += si * h;
          x(j) += sj * h;
          return pair_lambda(pair, x.head<3>(), x.tail<3>());
        };
        hess(i, j) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * h * h);
      }
    }
    EXPECT_LT(relative_error(Matrix6(2.0 * lin.information), hess), 1e-3)
        << "pair " << pair.frame_i << "-" << pair.frame_j;
  }
}

TEST(Solver, ChiSquareThresholdMatchesIndependentQuantile) {
  for (const double alpha : {0.01, 0.05, 0.1, 0.5}) {
    EXPECT_NEAR(chi2_threshold(alpha, 1), chi2_one_dof_quantile(alpha), 1e-9) << alpha;
    // Two degrees of freedom: exponential tail, quantile -2 ln alpha.
    EXPECT_NEAR(chi2_threshold(alpha, 2), -2.0 * std::log(alpha), 1e-9) << alpha;
  }
  EXPECT_THROW(chi2_threshold(0.0, 1), std::invalid_argument);
  EXPECT_THROW(chi2_threshold(0.05, 0), std::invalid_argument);
}

TEST(Solver, PassRateGateIsInclusiveAtThreshold) {
  SolverConfig cfg;
  EXPECT_FALSE(initialization_succeeded(0.799, 10.0, cfg));
  EXPECT_TRUE(initialization_succeeded(0.800, 10.0, cfg));
  EXPECT_TRUE(initialization_succeeded(0.801, 10.0, cfg));
  EXPECT_FALSE(initialization_succeeded(0.9, cfg.max_condition, cfg));
  EXPECT_FALSE(initialization_succeeded(0.9, std::numeric_limits<double>::infinity(), cfg));
}

TEST(Solver, FeatureGateRejectsGrossOutliers) {
  auto f = make_fixture(6, true);
  auto window = f.seq->build_window(0, 6, f.true_state, SolverConfig{});
  auto& pair = window.pairs.front();
  const auto lin = linearize_pair(pair, Vector3::Zero(), Vector3::Zero());
  // Replace a few bearings by far-off directions.
  for (std::size_t k = 0; k < 5; ++k) {
    pair.matches[k].f_j = (pair.matches[k].f_j + Vector3(0.2, -0.1, 0.0)).normalized();
  }
  const auto gate = fp_weights(pair, lin.v, Vector3::Zero(), Vector3::Zero(), SolverConfig{});
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(gate.inliers[k], 0) << k;
  EXPECT_GT(gate.passed, pair.matches.size() * 8 / 10);
  for (const double w : gate.weights) {
    EXPECT_GE(w, SolverConfig{}.weight_min);
    EXPECT_LE(w, SolverConfig{}.weight_max);
  }
}

TEST(Solver, LambdaVarianceScalesWithPixelNoise) {
  auto f = make_fixture(7, true);
  const KeyframeSequence a(f.data, 4.0, 0.5), b(f.data, 4.0, 1.0);
  auto wa = a.build_window(0, 5, f.true_state, SolverConfig{});
  auto wb = b.build_window(0, 5, f.true_state, SolverConfig{});
  for (std::size_t p = 0; p < wa.pairs.size(); ++p) {
    const double va = lambda_variance(wa.pairs[p], Vector3::Zero(), Vector3::Zero());
    const double vb = lambda_variance(wb.pairs[p], Vector3::Zero(), Vector3::Zero());
    EXPECT_GT(va, 0.0);
    // The bearing part quadruples; the gyro part stays, so the ratio is at most 4.
    EXPECT_GT(vb / va, 1.5);
    EXPECT_LE(vb / va, 4.0 + 1e-9);
  }
}

TEST(Solver, RelinearizeReintegratesFarPairsOnly) {
  auto f = make_fixture(8, true);
  auto window = f.seq->build_window(0, 6, f.nominal, SolverConfig{});
  CalibState near = f.nominal;
  near.b_g = Vector3(1e-4, 0.0, 0.0);
  EXPECT_EQ(relinearize(window, near, 1e-3), 0);
  CalibState far = f.nominal;
  far.b_g = Vector3(0.01, 0.0, 0.0);
  EXPECT_EQ(relinearize(window, far, 1e-3), static_cast<int>(window.pairs.size()) + 1);
  for (const auto& pair : window.pairs) EXPECT_EQ(pair.imu.bias, far.b_g);
  EXPECT_EQ(window.linearization.b_g, far.b_g);
}

TEST(Solver, NoiselessRecoveryIsExact) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto f = make_fixture(seed, false, 0.0, 4.0);
    auto window = f.seq->build_window(0, 10, f.nominal, SolverConfig{});
    const auto report = irls_solve(window, f.nominal, SolverConfig{});
    ASSERT_TRUE(report.success) << report.failure_reason;
    EXPECT_LT((report.state.b_g - f.true_state.b_g).norm(), 1e-6);
    EXPECT_LT(rad2deg(geodesic_distance(report.state.R_CI, f.true_state.R_CI)), 1e-4);
  }
}

TEST(Solver, PureRotationRecovers) {
  auto f = make_fixture(9, true, 4.0, 4.0);
  auto window = f.seq->build_window(0, 10, f.nominal, SolverConfig{});
  const auto report = irls_solve(window, f.nominal, SolverConfig{});
  ASSERT_TRUE(report.success) << report.failure_reason;
  EXPECT_LT((report.state.b_g - f.true_state.b_g).norm() / f.true_state.b_g.norm(), 0.2);
  EXPECT_LT(rad2deg(geodesic_distance(report.state.R_CI, f.true_state.R_CI)), 1.0);
  EXPECT_TRUE(report.covariance.allFinite());
  EXPECT_GT(report.covariance.diagonal().minCoeff(), 0.0);
}

// Without rotation the extrinsic is unobservable. The conditioning gate is
// unit-dependent and lets this through; the reported covariance must say so.
TEST(Solver, StaticSensorReportsUnobservableExtrinsic) {
  ScenarioConfig sc;
  sc.duration = 4.0;
  sc.rotation_prefix = 4.0;
  sc.excitation = 0.0;
  GroundTruth truth;
  const auto data = generate(sc, &truth);
  const KeyframeSequence seq(data, 4.0, 0.5);
  CalibState nominal;
  nominal.R_CI = data.calib.R_CI_nominal;
  auto window = seq.build_window(0, 10, nominal, SolverConfig{});
  const auto report = irls_solve(window, nominal, SolverConfig{});
  EXPECT_GT(report.condition_number, 1e6);
  const double sd_deg = rad2deg(std::sqrt(report.covariance.diagonal().tail<3>().maxCoeff()));
  EXPECT_GT(sd_deg, 10.0);
}

TEST(Solver, EveryWeightingModeSolvesACleanWindow) {
  auto f = make_fixture(10, true);
  for (const auto mode : {WeightingMode::kNone, WeightingMode::kLambda, WeightingMode::kFeaturePair,
                          WeightingMode::kCombined}) {
    SolverConfig cfg;
    cfg.mode = mode;
    auto window = f.seq->build_window(0, 10, f.nominal, cfg);
    const auto report = irls_solve(window, f.nominal, cfg);
    EXPECT_TRUE(report.success) << to_string(mode) << ": " << report.failure_reason;
    EXPECT_LT(rad2deg(geodesic_distance(report.state.R_CI, f.true_state.R_CI)), 2.0) << to_string(mode);
    EXPECT_EQ(weighting_mode_from_string(to_string(mode)), mode);
  }
  EXPECT_THROW(weighting_mode_from_string("robust"), std::invalid_argument);
}

TEST(Solver, OutliersAreCulled) {
  // Two percent of observations replaced by uniform pixels.
  for (const std::uint64_t seed : {11u, 12u, 13u}) {
    ScenarioConfig sc;
    sc.seed = seed;
    sc.duration = 4.0;
    sc.rotation_prefix = 0.0;
    sc.translation_ramp = 0.01;
    sc.outlier_ratio = 0.02;
    GroundTruth truth;
    const auto data = generate(sc, &truth);
    const KeyframeSequence seq(data, 4.0, 0.5);
    CalibState nominal;
    nominal.R_CI = data.calib.R_CI_nominal;
    auto window = seq.build_window(0, 10, nominal, SolverConfig{});
    const auto report = irls_solve(window, nominal, SolverConfig{});
    ASSERT_TRUE(report.success) << "seed " << seed << ": " << report.failure_reason;
    EXPECT_LT(rad2deg(geodesic_distance(report.state.R_CI, truth.R_CI)), 1.0) << seed;
    EXPECT_LT((report.state.b_g - truth.initial_bias).norm() / truth.initial_bias.norm(), 0.3) << seed;
  }
}

TEST(Solver, GrossMismatchesDoNotOwnTheGate) {
  // At the true state the gate must keep nearly every inlier even when five
  // percent of observations are gross mismatches.
  ScenarioConfig sc;
  sc.seed = 12;
  sc.duration = 4.0;
  sc.rotation_prefix = 0.0;
  sc.translation_ramp = 0.01;
  sc.outlier_ratio = 0.05;
  GroundTruth truth;
  const auto data = generate(sc, &truth);
  const KeyframeSequence seq(data, 4.0, 0.5);
  CalibState state;
  state.R_CI = truth.R_CI;
  state.b_g = truth.initial_bias;
  auto window = seq.build_window(0, 10, state, SolverConfig{});
  relinearize(window, state, 0.0);
  const auto gate = gate_window(window, SolverConfig{});
  EXPECT_GT(static_cast<double>(gate.passed) / static_cast<double>(gate.total), 0.8);
}

TEST(Solver, ConfigValidation) {
  SolverConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  for (auto mutate : std::vector<std::function<void(SolverConfig&)>>{
           [](SolverConfig& c) { c.max_loops = 0; },
           [](SolverConfig& c) { c.chi2_alpha = 1.0; },
           [](SolverConfig& c) { c.epsilon_pass = 1.5; },
           [](SolverConfig& c) { c.weight_min = 2.0 * c.weight_max; },
           [](SolverConfig& c) { c.max_condition = 1.0; },
           [](SolverConfig& c) { c.max_bias_norm = 0.0; },
       }) {
    SolverConfig bad;
    mutate(bad);
    EXPECT_THROW(bad.validate(), std::invalid_argument);
  }
}

TEST(Solver, FisherCovarianceIsSymmetricPositive) {
  auto f = make_fixture(12, true);
  auto window = f.seq->build_window(0, 10, f.nominal, SolverConfig{});
  const auto report = irls_solve(window, f.nominal, SolverConfig{});
  ASSERT_TRUE(report.success);
  const auto fr = fisher_covariance(window, report.state, SolverConfig{});
  ASSERT_TRUE(fr.ok);
  EXPECT_LT((fr.covariance - fr.covariance.transpose()).norm(), 1e-15 * fr.covariance.norm() + 1e-30);
  Eigen::SelfAdjointEigenSolver<Matrix6> eig(fr.covariance);
  EXPECT_GT(eig.eigenvalues()(0), 0.0);
  EXPECT_LT((fr.information * fr.fisher_covariance - Matrix6::Identity()).norm(), 1e-6);
}

}  // namespace
}  // namespace doge
