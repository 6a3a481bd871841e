#include "doge/preintegration.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace doge {

void ImuNoiseModel::validate() const {
  if (!(gyro_noise_density > 0.0) || !(gyro_random_walk > 0.0) || !(sample_interval > 0.0)) {
    throw std::invalid_argument("ImuNoiseModel: noise densities and sample interval must be positive");
  }
}

namespace {

void check_monotone(std::span<const GyroSample> samples) {
  if (samples.empty()) throw std::invalid_argument("integrate: empty gyroscope stream");
  for (std::size_t k = 1; k < samples.size(); ++k) {
    if (!(samples[k].t > samples[k - 1].t)) {
      throw std::invalid_argument("integrate: timestamps not strictly increasing at sample " +
                                  std::to_string(k));
    }
  }
}

// One zero-order-hold step of length dt (Forster et al. rotation recursion).
void step(PreintegratedRotation& p, const Vector3& omega, double dt, double sigma_g2) {
  const Vector3 phi = (omega - p.bias) * dt;
  const Matrix3 inc = exp_so3(phi);
  const Matrix3 jr = right_jacobian(phi);
  p.d_R_d_bg = inc.transpose() * p.d_R_d_bg - jr * dt;
  p.covariance = inc.transpose() * p.covariance * inc + (sigma_g2 * dt) * jr * jr.transpose();
  p.covariance = 0.5 * (p.covariance + p.covariance.transpose()).eval();
  p.delta_R = p.delta_R * inc;
}

}  // namespace

PreintegratedRotation integrate(std::span<const GyroSample> samples, const Vector3& bias,
                                const ImuNoiseModel& noise) {
  check_monotone(samples);
  return integrate(samples, samples.front().t, samples.back().t + noise.sample_interval, bias,
                   noise);
}

PreintegratedRotation integrate(std::span<const GyroSample> samples, double t_begin,
                                double t_end, const Vector3& bias, const ImuNoiseModel& noise) {
  check_monotone(samples);
  noise.validate();
  if (!bias.allFinite()) throw std::invalid_argument("integrate: non-finite bias");
  if (!(t_end >= t_begin)) throw std::invalid_argument("integrate: t_end before t_begin");
  const double last_end = samples.back().t + noise.sample_interval;
  if (t_begin < samples.front().t || t_end > last_end + 1e-12) {
    throw std::invalid_argument("integrate: samples do not cover the requested interval");
  }

  PreintegratedRotation p;
  p.t_begin = t_begin;
  p.t_end = t_end;
  p.bias = bias;
  const double sigma_g2 = noise.gyro_noise_density * noise.gyro_noise_density;

  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double hold_begin = samples[k].t;
    const double hold_end = k + 1 < samples.size() ? samples[k + 1].t : last_end;
    if (hold_end <= t_begin) continue;
    if (hold_begin >= t_end) break;
    const double dt = std::min(hold_end, t_end) - std::max(hold_begin, t_begin);
    if (dt > 0.0) step(p, samples[k].omega, dt, sigma_g2);
  }
  return p;
}

CameraPreintegration to_camera_frame(const PreintegratedRotation& imu, const Matrix3& R_CI) {
  CameraPreintegration c;
  c.R_CI = R_CI;
  c.imu_delta_R = imu.delta_R;
  c.delta_R = R_CI * imu.delta_R * R_CI.transpose();
  c.d_R_d_bg = R_CI * imu.d_R_d_bg;
  c.d_R_d_theta = R_CI * imu.delta_R.transpose() * R_CI.transpose() - Matrix3::Identity();
  return c;
}

Vector3 correction_vector(const CameraPreintegration& cam, const Vector3& d_bg,
                          const Vector3& d_theta) {
  return cam.d_R_d_bg * d_bg + cam.d_R_d_theta_right() * d_theta;
}

Matrix3 apply_correction(const CameraPreintegration& cam, const Vector3& d_bg,
                         const Vector3& d_theta) {
  return cam.delta_R * exp_so3(correction_vector(cam, d_bg, d_theta));
}

}  // namespace doge
