#pragma once

#include <functional>
#include <random>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "doge/manifold.hpp"

namespace doge::testing {

inline Vector3 random_vector(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss;
  return scale * Vector3(gauss(rng), gauss(rng), gauss(rng));
}

/// Uniformly distributed rotation, built from a random unit quaternion so it
/// does not depend on the library's exponential map.
inline Matrix3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  q.normalize();
  return q.toRotationMatrix();
}

/// Rotation by `angle` about unit `axis`, via Eigen's angle-axis.
inline Matrix3 axis_angle(const Vector3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

/// Rotation vector of R, via Eigen's angle-axis.
inline Vector3 rotation_vector(const Matrix3& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

/// Central-difference Jacobian of f: R^n -> R^m at x.
template <int M, int N>
Eigen::Matrix<double, M, N> numeric_jacobian(
    const std::function<Eigen::Matrix<double, M, 1>(const Eigen::Matrix<double, N, 1>&)>& f,
    const Eigen::Matrix<double, N, 1>& x, double h = 1e-6) {
  Eigen::Matrix<double, M, N> J;
  for (int i = 0; i < N; ++i) {
    Eigen::Matrix<double, N, 1> xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

/// Largest entry of |a - b| relative to max(|b|_max, floor).
template <typename A, typename B>
double relative_error(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, double floor = 1e-8) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), floor);
}

}  // namespace doge::testing
