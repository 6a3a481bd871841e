#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "doge/epipolar.hpp"
#include "test_support.hpp"

namespace doge {
namespace {

using testing::random_rotation;
using testing::random_vector;

TEST(Epipolar, UnprojectInvertsPinhole) {
  CameraIntrinsics cam;
  const Vector3 x(0.3, -0.2, 1.0);
  const double u = cam.fx * x.x() / x.z() + cam.cx;
  const double v = cam.fy * x.y() / x.z() + cam.cy;
  const Vector3 f = unproject(u, v, cam);
  EXPECT_NEAR(f.norm(), 1.0, 1e-15);
  EXPECT_LT((f - x.normalized()).norm(), 1e-14);
}

TEST(Epipolar, BearingCovarianceMatchesMonteCarlo) {
  CameraIntrinsics cam;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> gauss;
  const double sigma = 0.5;
  for (const auto& [u, v] : {std::pair{367.0, 248.0}, std::pair{30.0, 20.0}, std::pair{700.0, 450.0}}) {
    const auto obs = unproject_with_covariance(u, v, cam, sigma);
    Matrix3 cov = Matrix3::Zero();
    const int runs = 20000;
    for (int r = 0; r < runs; ++r) {
      const Vector3 e = unproject(u + sigma * gauss(rng), v + sigma * gauss(rng), cam) - obs.f;
      cov += e * e.transpose();
    }
    cov /= runs;
    // Tangent-plane block: compare along the two directions orthogonal to f.
    const Vector3 a = obs.f.cross(Vector3::UnitX()).normalized();
    const Vector3 b = obs.f.cross(a);
    for (const Vector3& d : {a, b}) {
      EXPECT_NEAR(d.dot(obs.covariance * d) / d.dot(cov * d), 1.0, 0.05) << u << "," << v;
    }
    Eigen::SelfAdjointEigenSolver<Matrix3> eig(obs.covariance);
    EXPECT_GT(eig.eigenvalues()(0), 0.0);
  }
}

TEST(Epipolar, UnprojectOutsideImageThrows) {
  CameraIntrinsics cam;
  EXPECT_THROW(unproject_with_covariance(-1.0, 10.0, cam), std::out_of_range);
  EXPECT_THROW(unproject_with_covariance(10.0, cam.height + 1.0, cam), std::out_of_range);
}

TEST(Epipolar, SymmetricEigenMatchesEigenSolver) {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 500; ++i) {
    const Matrix3 Q = random_rotation(rng);
    const Vector3 d = random_vector(rng, 3.0);
    const Matrix3 m = Q * d.asDiagonal() * Q.transpose();
    const auto got = symmetric_eigen3(m);
    Eigen::SelfAdjointEigenSolver<Matrix3> ref(m);
    EXPECT_LT((got.values - ref.eigenvalues()).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, d.cwiseAbs().maxCoeff()));
    EXPECT_LT((got.vectors.transpose() * got.vectors - Matrix3::Identity()).norm(), 1e-12);
    for (int k = 0; k < 3; ++k) {
      const Vector3 r = m * got.vectors.col(k) - got.values(k) * got.vectors.col(k);
      EXPECT_LT(r.norm(), 1e-10 * std::max(1.0, d.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(Epipolar, SymmetricEigenRepeatedAndDegenerate) {
  const auto zero = symmetric_eigen3(Matrix3::Zero().eval());
  EXPECT_EQ(zero.values, Vector3::Zero());
  const auto iso = symmetric_eigen3(Matrix3(2.0 * Matrix3::Identity()));
  EXPECT_LT((iso.values - Vector3::Constant(2.0)).norm(), 1e-14);
  EXPECT_EQ(iso.vectors.col(0), Vector3::UnitX());

  // Rank one: the smallest eigenvalue is repeated; the vector must still be
  // a unit null vector.
  const Vector3 a = Vector3(1.0, 2.0, 3.0).normalized();
  const auto r1 = symmetric_eigen3(Matrix3(a * a.transpose()));
  EXPECT_NEAR(r1.values(0), 0.0, 1e-14);
  EXPECT_NEAR(r1.vectors.col(0).dot(a), 0.0, 1e-12);
  EXPECT_NEAR(r1.vectors.col(0).norm(), 1.0, 1e-14);
}

TEST(Epipolar, MinEigenpairClampsAndCanonicalizes) {
  Matrix3 m = Vector3(-1e-18, 1.0, 2.0).asDiagonal();
  const auto p = min_eigenpair(m);
  EXPECT_EQ(p.value, 0.0);
  EXPECT_EQ(p.vector, Vector3::UnitX());
  const auto q = min_eigenpair(Matrix3(Vector3(3.0, 2.0, 0.5).asDiagonal()));
  EXPECT_NEAR(q.value, 0.5, 1e-15);
  EXPECT_EQ(q.vector, Vector3::UnitZ());
}

// Two views of random points; camera j is rotated by R_ij and displaced by t
// (in frame i).
PairProblem synthetic_pair(std::mt19937_64& rng, const Matrix3& R_ij, const Vector3& t, int count) {
  PairProblem p;
  p.frame_i = 0;
  p.frame_j = 1;
  for (int k = 0; k < count; ++k) {
    const Vector3 X = Vector3(0.0, 0.0, 5.0) + random_vector(rng, 1.5);
    Correspondence c;
    c.feature_id = k;
    c.f_i = X.normalized();
    c.f_j = (R_ij.transpose() * (X - t)).normalized();
    c.cov_i = c.cov_j = 1e-6 * Matrix3::Identity();
    p.matches.push_back(c);
  }
  p.cam.delta_R = R_ij;
  p.reset_weights();
  return p;
}

TEST(Epipolar, PureRotationGivesZeroNormals) {
  std::mt19937_64 rng(23);
  const Matrix3 R = testing::axis_angle(Vector3(0.2, 1.0, 0.1), 0.3);
  const auto pair = synthetic_pair(rng, R, Vector3::Zero(), 40);
  for (const auto& c : pair.matches) EXPECT_LT(epipolar_normal(c.f_i, R, c.f_j).norm(), 1e-14);
  EXPECT_LT(build_M(pair, Vector3::Zero(), Vector3::Zero()).norm(), 1e-25);
}

TEST(Epipolar, TranslationIsTheNullDirection) {
  std::mt19937_64 rng(24);
  const Matrix3 R = testing::axis_angle(Vector3(1.0, 0.0, 0.3), 0.2);
  const Vector3 t(0.4, -0.1, 0.2);
  const auto pair = synthetic_pair(rng, R, t, 60);
  const Matrix3 M = build_M(pair, Vector3::Zero(), Vector3::Zero());
  const auto p = min_eigenpair(M);
  EXPECT_LT(p.value, 1e-14 * M.trace());
  EXPECT_GT(std::abs(p.vector.dot(t.normalized())), 1.0 - 1e-10);

  // A wrong rotation breaks coplanarity.
  auto wrong = pair;
  wrong.cam.delta_R = R * exp_so3(Vector3(0.0, 0.01, 0.0));
  EXPECT_GT(min_eigenpair(build_M(wrong, Vector3::Zero(), Vector3::Zero())).value, 1e-8);
}

TEST(Epipolar, BuildMHonoursWeightsAndActiveSet) {
  std::mt19937_64 rng(25);
  const Matrix3 R = testing::axis_angle(Vector3(0.0, 1.0, 0.0), 0.1);
  auto pair = synthetic_pair(rng, R, Vector3(0.3, 0.0, 0.0), 10);
  const Matrix3 full = build_M(pair, Vector3::Zero(), Vector3::Zero());
  pair.active[3] = 0;
  const auto& c = pair.matches[3];
  const Vector3 n = epipolar_normal(c.f_i, R, c.f_j);
  EXPECT_LT((build_M(pair, Vector3::Zero(), Vector3::Zero()) - (full - n * n.transpose())).norm(), 1e-15);
  pair.active[3] = 1;
  pair.weights.assign(pair.weights.size(), 2.0);
  EXPECT_LT((build_M(pair, Vector3::Zero(), Vector3::Zero()) - 4.0 * full).norm(), 1e-14);
  EXPECT_EQ(pair.active_count(), pair.matches.size());
}

}  // namespace
}  // namespace doge
