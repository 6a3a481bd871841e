#include "doge/epipolar.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace doge {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("CameraIntrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("CameraIntrinsics: image size must be positive");
  if (!contains(cx, cy)) throw std::invalid_argument("CameraIntrinsics: principal point outside the image");
}

Vector3 unproject(double u, double v, const CameraIntrinsics& cam) {
  return Vector3((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0).normalized();
}

BearingObservation unproject_with_covariance(double u, double v, const CameraIntrinsics& cam,
                                             double pixel_sigma, const UnscentedParams& ut) {
  if (!cam.contains(u, v)) {
    throw std::out_of_range("unproject_with_covariance: pixel (" + std::to_string(u) + ", " +
                            std::to_string(v) + ") outside the image");
  }
  if (!(pixel_sigma >= 0.0)) throw std::invalid_argument("unproject_with_covariance: negative pixel sigma");

  BearingObservation obs;
  obs.u = u;
  obs.v = v;
  obs.f = unproject(u, v, cam);

  if (pixel_sigma > 0.0) {
    constexpr int n = 2;
    const double lambda = ut.alpha * ut.alpha * (n + ut.kappa) - n;
    const double spread = std::sqrt((n + lambda)) * pixel_sigma;
    const double w0_mean = lambda / (n + lambda);
    const double w0_cov = w0_mean + (1.0 - ut.alpha * ut.alpha + ut.beta);
    const double wi = 1.0 / (2.0 * (n + lambda));

    const std::array<Eigen::Vector2d, 4> offsets = {
        Eigen::Vector2d(spread, 0.0), Eigen::Vector2d(-spread, 0.0),
        Eigen::Vector2d(0.0, spread), Eigen::Vector2d(0.0, -spread)};
    // Deviations are taken relative to the central point to avoid cancelling
    // the large opposite-sign weights.
    std::array<Vector3, 4> dev;
    Vector3 mean_dev = Vector3::Zero();
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      dev[i] = unproject(u + offsets[i].x(), v + offsets[i].y(), cam) - obs.f;
      mean_dev += wi * dev[i];
    }
    Matrix3 cov = w0_cov * mean_dev * mean_dev.transpose();
    for (const auto& d : dev) {
      const Vector3 c = d - mean_dev;
      cov += wi * c * c.transpose();
    }
    obs.covariance = 0.5 * (cov + cov.transpose());
  }
  obs.covariance += kRadialRegularizer * obs.f * obs.f.transpose();
  return obs;
}

void PairProblem::reset_weights() {
  weights.assign(matches.size(), 1.0);
  active.assign(matches.size(), 1);
  compensate = false;
}

std::size_t PairProblem::active_count() const {
  std::size_t n = 0;
  for (auto a : active) n += a != 0;
  return n;
}

Matrix3 build_M(const PairProblem& pair, const Vector3& d_bg, const Vector3& d_theta) {
  const Matrix3 rot = apply_correction(pair.cam, d_bg, d_theta);
  Matrix3 m = Matrix3::Zero();
  for (std::size_t k = 0; k < pair.matches.size(); ++k) {
    if (!pair.active.empty() && !pair.active[k]) continue;
    const double w = pair.weights.empty() ? 1.0 : pair.weights[k];
    const Vector3 n = epipolar_normal(pair.matches[k].f_i, rot, (w * pair.matches[k].f_j).eval());
    m.noalias() += n * n.transpose();
  }
  return m;
}

}  // namespace doge
