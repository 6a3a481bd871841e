#pragma once

#include <span>

#include "doge/manifold.hpp"

namespace doge {

/// One gyroscope reading in the IMU frame. The rate is held constant until
/// the next sample (zero-order hold).
struct GyroSample {
  double t = 0.0;                      ///< seconds
  Vector3 omega = Vector3::Zero();     ///< rad/s
};

/// Continuous-time gyroscope noise densities plus the nominal sample period.
struct ImuNoiseModel {
  double gyro_noise_density = 1.6968e-4;   ///< rad/s/sqrt(Hz)
  double gyro_random_walk = 1.9393e-5;     ///< rad/s^2/sqrt(Hz)
  double sample_interval = 1.0 / 200.0;    ///< s

  void validate() const;
};

/// Rotation-only preintegration between two instants, expressed in the IMU
/// frame, with its bias Jacobian and covariance in the right tangent space.
struct PreintegratedRotation {
  Matrix3 delta_R = Matrix3::Identity();
  Matrix3 d_R_d_bg = Matrix3::Zero();
  Matrix3 covariance = Matrix3::Zero();
  double t_begin = 0.0;
  double t_end = 0.0;
  Vector3 bias = Vector3::Zero();   ///< bias estimate used during integration

  double duration() const { return t_end - t_begin; }
};

/// The same increment conjugated into the camera frame.
///
/// d_R_d_theta is the extrinsic Jacobian R_CI gamma^T R_CI^T - I, which is the
/// derivative for a perturbation applied on the left of R_CI
/// (R_CI <- Exp(d) R_CI). The solver perturbs R_CI on the right
/// (R_CI <- R_CI Exp(d)); d_R_d_theta_right() gives that Jacobian.
struct CameraPreintegration {
  Matrix3 delta_R = Matrix3::Identity();
  Matrix3 d_R_d_bg = Matrix3::Zero();
  Matrix3 d_R_d_theta = Matrix3::Zero();
  Matrix3 R_CI = Matrix3::Identity();
  Matrix3 imu_delta_R = Matrix3::Identity();

  Matrix3 d_R_d_theta_right() const { return d_R_d_theta * R_CI; }
};

/// Integrates every sample over [t_k, t_{k+1}); the last sample is held for
/// one nominal sample interval.
PreintegratedRotation integrate(std::span<const GyroSample> samples, const Vector3& bias,
                                const ImuNoiseModel& noise);

/// Integrates over [t_begin, t_end]. Samples must cover the interval; the
/// first sample may start before t_begin and partial hold intervals are cut.
PreintegratedRotation integrate(std::span<const GyroSample> samples, double t_begin,
                                double t_end, const Vector3& bias, const ImuNoiseModel& noise);

/// gamma_C = R_CI gamma_I R_CI^T with its bias and extrinsic Jacobians.
CameraPreintegration to_camera_frame(const PreintegratedRotation& imu, const Matrix3& R_CI);

/// First-order corrected camera rotation gamma_C Exp(J_bg d_bg + J_theta d_theta),
/// with d_theta a right perturbation of R_CI. Valid while both corrections
/// stay in the linear regime (a few degrees, a few mrad/s).
Matrix3 apply_correction(const CameraPreintegration& cam, const Vector3& d_bg,
                         const Vector3& d_theta);

/// Correction vector J_bg d_bg + J_theta d_theta used by apply_correction.
Vector3 correction_vector(const CameraPreintegration& cam, const Vector3& d_bg,
                          const Vector3& d_theta);

}  // namespace doge
