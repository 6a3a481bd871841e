#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "doge/dataset.hpp"
#include "doge/manifold.hpp"

namespace doge {

/// Synthetic scenario. Distances in metres, angles in radians unless the name
/// says otherwise.
struct ScenarioConfig {
  std::uint64_t seed = 1;          ///< scene, trajectory, bias and deformation axis
  std::uint64_t noise_seed = 0;    ///< pixel and IMU noise; 0 derives it from seed
  int point_count = 500;
  double duration = 50.0;          ///< s
  double rotation_prefix = 25.0;   ///< s of pure rotation at the start
  double pixel_sigma = 0.5;        ///< px
  ImuNoiseModel imu;
  bool imu_noise = true;
  bool bias_random_walk = false;
  std::optional<Vector3> bias;     ///< default: random direction, bias_magnitude long
  double bias_magnitude = 0.03;    ///< rad/s
  Matrix3 R_CI_true = euroc_R_CI();
  double extrinsic_offset_deg = 10.0;
  double keyframe_rate = 4.0;      ///< Hz
  CameraIntrinsics camera;
  int max_features = 150;          ///< per frame
  double outlier_ratio = 0.0;      ///< share of observations replaced by uniform pixels
  double excitation = 1.0;         ///< rotation amplitude scale
  double excitation_modulation = 0.0;   ///< depth of the slow amplitude envelope, [0, 1)
  double modulation_period = 40.0;      ///< s
  double translation_amplitude = 0.5;   ///< m
  double translation_ramp = 2.0;        ///< s for the translation to fade in
  double min_depth = 3.0;
  double max_depth = 8.0;
  double cone_half_angle_deg = 60.0;

  void validate() const;
};

/// Smooth body motion: R_WI(t) = R_CI Exp(phi(t)) with phi a sum of
/// sinusoids, so the camera looks down world +z at phi = 0; the position is
/// exactly constant until the rotation prefix ends and then fades in a
/// sinusoidal translation through a quintic smoothstep (C2 at the seam).
class Trajectory {
 public:
  explicit Trajectory(const ScenarioConfig& config);

  Matrix3 R_WI(double t) const;
  Vector3 position(double t) const;
  /// Angular rate in the body frame, Jr(phi) dphi/dt.
  Vector3 body_rate(double t) const;
  Vector3 phi(double t) const;
  Vector3 phi_dot(double t) const;

 private:
  double envelope(double t) const;
  double envelope_dot(double t) const;

  Matrix3 R_base_;
  std::array<std::array<double, 2>, 3> amp_{}, freq_{}, phase_{};
  Vector3 trans_amp_ = Vector3::Zero();
  Vector3 trans_freq_ = Vector3::Zero();
  double prefix_ = 0.0;
  double ramp_ = 1.0;
  double excitation_ = 1.0;
  double modulation_ = 0.0;
  double period_ = 1.0;
};

/// Everything the generator knows that a dataset does not carry.
struct GroundTruth {
  std::vector<Vector3> points;   ///< world frame, index = feature id
  Matrix3 R_CI = Matrix3::Identity();
  Vector3 initial_bias = Vector3::Zero();
};

/// Synthesizes IMU samples, keyframe feature tracks and ground truth.
///
/// Gyroscope samples carry the exact mean rate over each sample interval,
/// Log(R_k^T R_k+1) / dt, plus bias and white noise, so zero-order-hold
/// preintegration of noiseless data reproduces the true orientation to
/// rounding error. Frames are emitted at keyframe_rate; each keeps at most
/// max_features visible points, lowest ids first. Throws when a frame sees no
/// point.
Dataset generate(const ScenarioConfig& config, GroundTruth* truth = nullptr);

/// Camera-frame rotation R_WC = R_WI R_CI^T of a ground-truth record.
Matrix3 camera_rotation(const GroundTruthRecord& gt, const Matrix3& R_CI);

}  // namespace doge
