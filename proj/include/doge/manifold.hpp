#pragma once

// SO(3) primitives. Every function is templated on the Eigen expression it
// receives, so float, double and long double matrices all work.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace doge {

template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

using Matrix3 = Eigen::Matrix3d;
using Vector3 = Eigen::Vector3d;
using Matrix6 = Eigen::Matrix<double, 6, 6>;
using Vector6 = Eigen::Matrix<double, 6, 1>;

/// Below this angle the closed forms switch to their Taylor series.
template <typename Scalar>
inline constexpr Scalar kSmallAngle = Scalar(1e-6);

/// Distance from pi below which log_so3 recovers the axis from the
/// symmetric part of R instead of the skew part.
template <typename Scalar>
inline constexpr Scalar kNearPi = Scalar(1e-3);

template <typename Derived>
Mat3<typename Derived::Scalar> skew(const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  Mat3<S> m;
  m << S(0), -v(2), v(1),
       v(2), S(0), -v(0),
       -v(1), v(0), S(0);
  return m;
}

template <typename Derived>
Vec3<typename Derived::Scalar> vee(const Eigen::MatrixBase<Derived>& m) {
  return {m(2, 1), m(0, 2), m(1, 0)};
}

template <typename Derived>
Mat3<typename Derived::Scalar> exp_so3(const Eigen::MatrixBase<Derived>& theta) {
  using S = typename Derived::Scalar;
  const S angle = theta.norm();
  const Mat3<S> k = skew(theta);
  if (angle < kSmallAngle<S>) {
    return Mat3<S>::Identity() + k + S(0.5) * k * k;
  }
  const S a = std::sin(angle) / angle;
  const S b = (S(1) - std::cos(angle)) / (angle * angle);
  return Mat3<S>::Identity() + a * k + b * k * k;
}

template <typename Derived>
Vec3<typename Derived::Scalar> log_so3(const Eigen::MatrixBase<Derived>& rot) {
  using S = typename Derived::Scalar;
  const S c = std::clamp((rot.trace() - S(1)) / S(2), S(-1), S(1));
  // w = sin(angle) * axis
  const Vec3<S> w = S(0.5) * Vec3<S>(rot(2, 1) - rot(1, 2), rot(0, 2) - rot(2, 0),
                                     rot(1, 0) - rot(0, 1));
  const S s = w.norm();
  const S angle = std::atan2(s, c);

  if (angle < kSmallAngle<S>) {
    return w * (S(1) + angle * angle / S(6));
  }
  if (std::numbers::pi_v<S> - angle < kNearPi<S>) {
    // (R + R^T)/2 - cos(angle) I = (1 - cos(angle)) a a^T
    Mat3<S> sym = S(0.5) * (rot + rot.transpose());
    sym.diagonal().array() -= c;
    Eigen::Index col = 0;
    sym.diagonal().maxCoeff(&col);
    Vec3<S> axis = sym.col(col).normalized();
    if (axis.dot(w) < S(0)) axis = -axis;
    return angle * axis;
  }
  return w * (angle / s);
}

/// Jr(theta), with Exp(theta + d) ~= Exp(theta) Exp(Jr(theta) d).
template <typename Derived>
Mat3<typename Derived::Scalar> right_jacobian(const Eigen::MatrixBase<Derived>& theta) {
  using S = typename Derived::Scalar;
  const S angle = theta.norm();
  const Mat3<S> k = skew(theta);
  if (angle < kSmallAngle<S>) {
    return Mat3<S>::Identity() - S(0.5) * k + k * k / S(6);
  }
  const S a2 = angle * angle;
  return Mat3<S>::Identity() - (S(1) - std::cos(angle)) / a2 * k +
         (angle - std::sin(angle)) / (a2 * angle) * k * k;
}

template <typename Derived>
Mat3<typename Derived::Scalar> right_jacobian_inverse(const Eigen::MatrixBase<Derived>& theta) {
  using S = typename Derived::Scalar;
  const S angle = theta.norm();
  const Mat3<S> k = skew(theta);
  if (angle < kSmallAngle<S>) {
    return Mat3<S>::Identity() + S(0.5) * k + k * k / S(12);
  }
  const S coeff = S(1) / (angle * angle) -
                  (S(1) + std::cos(angle)) / (S(2) * angle * std::sin(angle));
  return Mat3<S>::Identity() + S(0.5) * k + coeff * k * k;
}

/// R [+] theta = R Exp(theta)
template <typename DerivedR, typename DerivedT>
Mat3<typename DerivedR::Scalar> boxplus(const Eigen::MatrixBase<DerivedR>& rot,
                                        const Eigen::MatrixBase<DerivedT>& theta) {
  return rot * exp_so3(theta);
}

/// R' [-] R = Log(R^-1 R')
template <typename DerivedA, typename DerivedB>
Vec3<typename DerivedA::Scalar> boxminus(const Eigen::MatrixBase<DerivedA>& rot_a,
                                         const Eigen::MatrixBase<DerivedB>& rot_b) {
  return log_so3((rot_b.transpose() * rot_a).eval());
}

/// Angle of R_a R_b^T in radians.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar geodesic_distance(const Eigen::MatrixBase<DerivedA>& rot_a,
                                            const Eigen::MatrixBase<DerivedB>& rot_b) {
  return log_so3((rot_a * rot_b.transpose()).eval()).norm();
}

/// Closest rotation in the Frobenius sense.
template <typename Derived>
Mat3<typename Derived::Scalar> project_to_so3(const Eigen::MatrixBase<Derived>& m) {
  using S = typename Derived::Scalar;
  Eigen::JacobiSVD<Mat3<S>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3<S> d = Mat3<S>::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < S(0) ? S(-1) : S(1);
  return svd.matrixU() * d * svd.matrixV().transpose();
}

template <typename Derived>
bool is_rotation(const Eigen::MatrixBase<Derived>& m,
                 typename Derived::Scalar tol = typename Derived::Scalar(1e-9)) {
  using S = typename Derived::Scalar;
  if (!m.allFinite()) return false;
  const Mat3<S> err = m * m.transpose() - Mat3<S>::Identity();
  return err.cwiseAbs().maxCoeff() <= tol && std::abs(m.determinant() - S(1)) <= tol;
}

inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

}  // namespace doge
