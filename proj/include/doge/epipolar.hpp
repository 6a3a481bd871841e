#pragma once

#include <array>
#include <cstdint>
#include <numbers>
#include <vector>

#include "doge/manifold.hpp"
#include "doge/preintegration.hpp"

namespace doge {

/// Pinhole camera without distortion.
struct CameraIntrinsics {
  double fx = 458.654;
  double fy = 457.296;
  double cx = 367.215;
  double cy = 248.375;
  int width = 752;
  int height = 480;

  void validate() const;
  bool contains(double u, double v) const {
    return u >= 0.0 && v >= 0.0 && u <= width && v <= height;
  }
};

/// Unit bearing in the camera frame with a full-rank covariance.
struct BearingObservation {
  Vector3 f = Vector3::UnitZ();
  Matrix3 covariance = Matrix3::Zero();
  double u = 0.0;
  double v = 0.0;
  int feature_id = -1;
  int frame_id = -1;
};

/// Variance added along the mean ray so the bearing covariance is full rank.
inline constexpr double kRadialRegularizer = 1e-12;

/// Scaled unscented transform parameters for the 2-D pixel noise.
struct UnscentedParams {
  double alpha = 1e-3;
  double beta = 2.0;
  double kappa = 0.0;
};

/// Normalized pinhole ray through (u, v).
Vector3 unproject(double u, double v, const CameraIntrinsics& cam);

/// Bearing for pixel (u, v) whose covariance is the isotropic pixel noise
/// pushed through the normalization by an unscented transform.
/// Throws std::out_of_range for pixels outside the image.
BearingObservation unproject_with_covariance(double u, double v, const CameraIntrinsics& cam,
                                             double pixel_sigma = 0.5,
                                             const UnscentedParams& ut = {});

/// n = f_i x (R f_j): normal of the epipolar plane spanned by the two rays.
template <typename DerivedA, typename DerivedR, typename DerivedB>
Vec3<typename DerivedA::Scalar> epipolar_normal(const Eigen::MatrixBase<DerivedA>& f_i,
                                                const Eigen::MatrixBase<DerivedR>& rot,
                                                const Eigen::MatrixBase<DerivedB>& f_j) {
  return f_i.cross(rot * f_j);
}

/// Sorted eigen-decomposition of a symmetric 3x3 matrix.
template <typename Scalar>
struct SymmetricEigen3 {
  Vec3<Scalar> values;      ///< ascending
  Mat3<Scalar> vectors;     ///< columns match values; each sign-canonicalized
};

namespace detail {

// Largest-magnitude component made positive; the first index wins ties.
template <typename Scalar>
Vec3<Scalar> canonical_sign(const Vec3<Scalar>& v) {
  Eigen::Index idx = 0;
  Scalar best = std::abs(v(0));
  for (Eigen::Index i = 1; i < 3; ++i) {
    if (std::abs(v(i)) > best) {
      best = std::abs(v(i));
      idx = i;
    }
  }
  return v(idx) < Scalar(0) ? Vec3<Scalar>(-v) : v;
}

// Unit vector orthogonal to unit n: the projection of the basis axis least
// aligned with n (lowest index on ties).
template <typename Scalar>
Vec3<Scalar> orthogonal_unit(const Vec3<Scalar>& n) {
  Eigen::Index idx = 0;
  Scalar best = std::abs(n(0));
  for (Eigen::Index i = 1; i < 3; ++i) {
    if (std::abs(n(i)) < best) {
      best = std::abs(n(i));
      idx = i;
    }
  }
  Vec3<Scalar> e = Vec3<Scalar>::Unit(idx);
  return (e - n.dot(e) * n).normalized();
}

}  // namespace detail

/// Closed-form symmetric 3x3 eigen-decomposition.
///
/// Eigenvalues come from the trigonometric solution of the characteristic
/// cubic. The eigenvector of the smallest eigenvalue is the largest cross
/// product of two rows of (M - lambda I); the other two are found by a 2x2
/// rotation inside its orthogonal complement, so the basis is exactly
/// orthonormal. When the smallest eigenvalue is repeated the vector is taken
/// from the eigenspace as the projection of the basis axis least aligned with
/// the remaining row direction; for a multiple of the identity it is e1.
template <typename Derived>
SymmetricEigen3<typename Derived::Scalar> symmetric_eigen3(const Eigen::MatrixBase<Derived>& m_in) {
  using S = typename Derived::Scalar;
  const Mat3<S> m = S(0.5) * (m_in + m_in.transpose());
  SymmetricEigen3<S> out;

  const S scale = m.cwiseAbs().maxCoeff();
  if (!(scale > S(0))) {
    out.values.setZero();
    out.vectors.setIdentity();
    return out;
  }
  const Mat3<S> a = m / scale;

  // Smallest eigenvalue of the normalized matrix.
  const S q = a.trace() / S(3);
  const S p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
  const S p2 = (a(0, 0) - q) * (a(0, 0) - q) + (a(1, 1) - q) * (a(1, 1) - q) +
               (a(2, 2) - q) * (a(2, 2) - q) + S(2) * p1;
  const S p = std::sqrt(p2 / S(6));
  S lambda_min = q;
  if (p > S(0)) {
    const Mat3<S> b = (a - q * Mat3<S>::Identity()) / p;
    const S r = std::clamp(b.determinant() / S(2), S(-1), S(1));
    const S phi = std::acos(r) / S(3);
    lambda_min = q + S(2) * p * std::cos(phi + S(2) * std::numbers::pi_v<S> / S(3));
  }

  // Eigenvector of the smallest eigenvalue.
  const Mat3<S> shifted = a - lambda_min * Mat3<S>::Identity();
  const std::array<Vec3<S>, 3> rows = {shifted.row(0).transpose(), shifted.row(1).transpose(),
                                       shifted.row(2).transpose()};
  const std::array<Vec3<S>, 3> crosses = {rows[0].cross(rows[1]), rows[0].cross(rows[2]),
                                          rows[1].cross(rows[2])};
  std::size_t ci = 0;
  for (std::size_t i = 1; i < 3; ++i) {
    if (crosses[i].squaredNorm() > crosses[ci].squaredNorm()) ci = i;
  }
  constexpr S kRankTol = S(1e-10);
  Vec3<S> v_min;
  if (crosses[ci].norm() > kRankTol) {
    v_min = crosses[ci].normalized();
  } else {
    std::size_t ri = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (rows[i].squaredNorm() > rows[ri].squaredNorm()) ri = i;
    }
    v_min = rows[ri].norm() > kRankTol ? detail::orthogonal_unit<S>(rows[ri].normalized())
                                       : Vec3<S>::UnitX();
  }
  v_min = detail::canonical_sign<S>(v_min);

  // Remaining pair from the 2x2 block in the complement of v_min.
  const Vec3<S> e1 = detail::orthogonal_unit<S>(v_min);
  const Vec3<S> e2 = v_min.cross(e1);
  const S b11 = e1.dot(a * e1);
  const S b12 = e1.dot(a * e2);
  const S b22 = e2.dot(a * e2);
  const S theta = S(0.5) * std::atan2(S(2) * b12, b11 - b22);
  const S c = std::cos(theta);
  const S s = std::sin(theta);
  Vec3<S> u_big = c * e1 + s * e2;
  Vec3<S> u_small = -s * e1 + c * e2;
  S l_big = u_big.dot(a * u_big);
  S l_small = u_small.dot(a * u_small);
  if (l_small > l_big) {
    std::swap(l_small, l_big);
    std::swap(u_small, u_big);
  }

  out.values << std::min(v_min.dot(a * v_min), l_small) * scale, l_small * scale, l_big * scale;
  out.vectors.col(0) = v_min;
  out.vectors.col(1) = detail::canonical_sign<S>(u_small);
  out.vectors.col(2) = detail::canonical_sign<S>(u_big);
  return out;
}

template <typename Scalar>
struct MinEigenpair {
  Scalar value;
  Vec3<Scalar> vector;
};

/// Smallest eigenvalue (clamped at zero) and its canonical unit eigenvector.
template <typename Derived>
MinEigenpair<typename Derived::Scalar> min_eigenpair(const Eigen::MatrixBase<Derived>& m) {
  using S = typename Derived::Scalar;
  const auto eig = symmetric_eigen3(m);
  return {std::max(eig.values(0), S(0)), eig.vectors.col(0)};
}

/// One feature seen in both keyframes of a pair.
struct Correspondence {
  int feature_id = -1;
  Vector3 f_i = Vector3::UnitZ();
  Vector3 f_j = Vector3::UnitZ();
  Matrix3 cov_i = Matrix3::Zero();
  Matrix3 cov_j = Matrix3::Zero();
};

/// A keyframe pair with everything needed to evaluate its epipolar-normal
/// matrix. Weights scale f_j (and w^2 scales cov_j); active marks the inlier set.
struct PairProblem {
  int frame_i = -1;
  int frame_j = -1;
  std::vector<Correspondence> matches;
  PreintegratedRotation imu;
  CameraPreintegration cam;
  std::vector<double> weights;
  std::vector<std::uint8_t> active;

  // Diagnostics from the most recent evaluation.
  Matrix3 M = Matrix3::Zero();
  double lambda_min = 0.0;
  Vector3 v = Vector3::UnitX();
  double sigma2_lambda = 1.0;
  bool excluded = false;
  bool compensate = false;   ///< noise compensation applies to this pair

  /// Resets weights to one and marks every correspondence active.
  void reset_weights();
  std::size_t active_count() const;
};

/// Epipolar-normal outer-product sum over the active set at the first-order
/// corrected rotation, using weighted f_j.
Matrix3 build_M(const PairProblem& pair, const Vector3& d_bg, const Vector3& d_theta);

}  // namespace doge
