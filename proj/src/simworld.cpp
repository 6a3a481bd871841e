#include "doge/simworld.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace doge {

void ScenarioConfig::validate() const {
  if (!(duration > 0.0) || !(rotation_prefix >= 0.0) || rotation_prefix > duration) {
    throw std::invalid_argument("ScenarioConfig: need 0 <= rotation_prefix <= duration, duration > 0");
  }
  if (!(keyframe_rate > 0.0)) throw std::invalid_argument("ScenarioConfig: keyframe_rate must be positive");
  if (point_count < 1 || max_features < 1) throw std::invalid_argument("ScenarioConfig: need points and features");
  if (!(pixel_sigma >= 0.0)) throw std::invalid_argument("ScenarioConfig: pixel_sigma must be >= 0");
  if (!(outlier_ratio >= 0.0 && outlier_ratio <= 1.0)) throw std::invalid_argument("ScenarioConfig: outlier_ratio must lie in [0, 1]");
  if (!(excitation_modulation >= 0.0 && excitation_modulation < 1.0)) {
    throw std::invalid_argument("ScenarioConfig: excitation_modulation must lie in [0, 1)");
  }
  if (!(min_depth > 0.0 && max_depth >= min_depth)) throw std::invalid_argument("ScenarioConfig: bad depth range");
  if (!is_rotation(R_CI_true, 1e-6)) throw std::invalid_argument("ScenarioConfig: R_CI_true is not a rotation");
  imu.validate();
  camera.validate();
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double smoothstep5(double x) { return x * x * x * (10.0 + x * (-15.0 + 6.0 * x)); }

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Vector3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector3 v;
  do {
    v = Vector3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

}  // namespace

Trajectory::Trajectory(const ScenarioConfig& config)
    : R_base_(config.R_CI_true),
      prefix_(config.rotation_prefix),
      ramp_(std::max(config.translation_ramp, 1e-3)),
      excitation_(config.excitation),
      modulation_(config.excitation_modulation),
      period_(config.modulation_period) {
  std::mt19937_64 rng(derived_seed(config.seed, 1));
  std::uniform_real_distribution<double> amp(0.12, 0.25);
  std::uniform_real_distribution<double> freq(0.15, 0.45);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  for (int a = 0; a < 3; ++a) {
    for (int i = 0; i < 2; ++i) {
      amp_[a][i] = amp(rng);
      freq_[a][i] = freq(rng);
      phase_[a][i] = phase(rng);
    }
  }
  std::uniform_real_distribution<double> tfreq(0.1, 0.3);
  trans_amp_ = config.translation_amplitude * Vector3(1.0, 0.8, 0.4);
  trans_freq_ = Vector3(tfreq(rng), tfreq(rng), tfreq(rng));
}

double Trajectory::envelope(double t) const {
  return excitation_ * (1.0 - modulation_ * 0.5 * (1.0 - std::cos(kTwoPi * t / period_)));
}

double Trajectory::envelope_dot(double t) const {
  return -excitation_ * modulation_ * 0.5 * (kTwoPi / period_) * std::sin(kTwoPi * t / period_);
}

Vector3 Trajectory::phi(double t) const {
  Vector3 p = Vector3::Zero();
  for (int a = 0; a < 3; ++a) {
    for (int i = 0; i < 2; ++i) p(a) += amp_[a][i] * std::sin(kTwoPi * freq_[a][i] * t + phase_[a][i]);
  }
  return envelope(t) * p;
}

Vector3 Trajectory::phi_dot(double t) const {
  Vector3 p = Vector3::Zero();
  Vector3 dp = Vector3::Zero();
  for (int a = 0; a < 3; ++a) {
    for (int i = 0; i < 2; ++i) {
      const double w = kTwoPi * freq_[a][i];
      p(a) += amp_[a][i] * std::sin(w * t + phase_[a][i]);
      dp(a) += amp_[a][i] * w * std::cos(w * t + phase_[a][i]);
    }
  }
  return envelope_dot(t) * p + envelope(t) * dp;
}

Matrix3 Trajectory::R_WI(double t) const { return R_base_ * exp_so3(phi(t)); }

Vector3 Trajectory::body_rate(double t) const { return right_jacobian(phi(t)) * phi_dot(t); }

Vector3 Trajectory::position(double t) const {
  if (t <= prefix_) return Vector3::Zero();
  const double s = t - prefix_;
  const double blend = smoothstep5(std::min(s / ramp_, 1.0));
  Vector3 p;
  for (int a = 0; a < 3; ++a) p(a) = trans_amp_(a) * std::sin(kTwoPi * trans_freq_(a) * s);
  return blend * p;
}

Matrix3 camera_rotation(const GroundTruthRecord& gt, const Matrix3& R_CI) {
  return gt.q_WI.normalized().toRotationMatrix() * R_CI.transpose();
}

Dataset generate(const ScenarioConfig& config, GroundTruth* truth) {
  config.validate();
  const Trajectory traj(config);
  std::mt19937_64 scene_rng(derived_seed(config.seed, 2));
  std::mt19937_64 noise_rng(config.noise_seed != 0 ? derived_seed(config.noise_seed, 3)
                                                   : derived_seed(config.seed, 4));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Scene: points in a cone about world +z at depths [min_depth, max_depth].
  std::vector<Vector3> points;
  points.reserve(static_cast<std::size_t>(config.point_count));
  const double cos_half = std::cos(deg2rad(config.cone_half_angle_deg));
  for (int i = 0; i < config.point_count; ++i) {
    const double c = cos_half + (1.0 - cos_half) * unit(scene_rng);
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    const double az = kTwoPi * unit(scene_rng);
    const double depth = config.min_depth + (config.max_depth - config.min_depth) * unit(scene_rng);
    points.emplace_back(depth * s * std::cos(az), depth * s * std::sin(az), depth * c);
  }

  const Vector3 bias0 = config.bias ? *config.bias : config.bias_magnitude * random_unit(scene_rng);
  const Vector3 offset_axis = random_unit(scene_rng);

  Dataset data;
  data.calib.camera = config.camera;
  data.calib.imu = config.imu;
  data.calib.pixel_sigma = config.pixel_sigma;
  data.calib.R_CI_true = config.R_CI_true;
  data.calib.R_CI_nominal =
      project_to_so3(Matrix3(config.R_CI_true * exp_so3(deg2rad(config.extrinsic_offset_deg) * offset_axis)));

  // IMU stream on an integer-nanosecond grid; one extra sample so the hold of
  // the last one reaches past the final frame.
  const auto step_ns = static_cast<std::int64_t>(std::llround(config.imu.sample_interval * 1e9));
  if (step_ns <= 0) throw std::invalid_argument("ScenarioConfig: IMU sample interval below 1 ns");
  const auto duration_ns = static_cast<std::int64_t>(std::llround(config.duration * 1e9));
  const std::int64_t count = duration_ns / step_ns + 2;
  const double sigma_d = config.imu.gyro_noise_density / std::sqrt(config.imu.sample_interval);
  const double sigma_rw = config.imu.gyro_random_walk * std::sqrt(config.imu.sample_interval);

  data.imu.reserve(static_cast<std::size_t>(count));
  data.groundtruth.reserve(static_cast<std::size_t>(count));
  Vector3 bias = bias0;
  double t_next = ns_to_s(0);
  Matrix3 R_next = traj.R_WI(t_next);
  for (std::int64_t k = 0; k < count; ++k) {
    const std::int64_t t_ns = k * step_ns;
    const double t = t_next;
    const Matrix3 R = R_next;
    t_next = ns_to_s(t_ns + step_ns);
    R_next = traj.R_WI(t_next);

    ImuRecord rec;
    rec.t_ns = t_ns;
    rec.omega = log_so3(Matrix3(R.transpose() * R_next)) / (t_next - t) + bias;
    if (config.imu_noise) rec.omega += sigma_d * Vector3(gauss(noise_rng), gauss(noise_rng), gauss(noise_rng));
    data.imu.push_back(rec);

    GroundTruthRecord gt;
    gt.t_ns = t_ns;
    gt.position = traj.position(t);
    gt.q_WI = Eigen::Quaterniond(R).normalized();
    gt.b_g = bias;
    data.groundtruth.push_back(gt);

    if (config.bias_random_walk) {
      bias += sigma_rw * Vector3(gauss(noise_rng), gauss(noise_rng), gauss(noise_rng));
    }
  }

  // Keyframes.
  const auto frame_ns = static_cast<std::int64_t>(std::llround(1e9 / config.keyframe_rate));
  const CameraIntrinsics& cam = config.camera;
  int frame_id = 0;
  for (std::int64_t t_ns = 0; t_ns <= duration_ns; t_ns += frame_ns, ++frame_id) {
    const double t = ns_to_s(t_ns);
    // Same orientation as the ground-truth record when the grids align.
    const Matrix3 R_WC = traj.R_WI(t) * config.R_CI_true.transpose();
    const Vector3 p = traj.position(t);
    int kept = 0;
    for (std::size_t id = 0; id < points.size() && kept < config.max_features; ++id) {
      const Vector3 x = R_WC.transpose() * (points[id] - p);
      if (x.z() < 0.1) continue;
      double u = cam.fx * x.x() / x.z() + cam.cx;
      double v = cam.fy * x.y() / x.z() + cam.cy;
      if (!cam.contains(u, v)) continue;
      if (config.pixel_sigma > 0.0) {
        u += config.pixel_sigma * gauss(noise_rng);
        v += config.pixel_sigma * gauss(noise_rng);
      }
      if (config.outlier_ratio > 0.0 && unit(noise_rng) < config.outlier_ratio) {
        u = cam.width * unit(noise_rng);
        v = cam.height * unit(noise_rng);
      }
      if (!cam.contains(u, v)) continue;
      data.features.push_back({t_ns, frame_id, static_cast<int>(id), u, v});
      ++kept;
    }
    if (kept == 0) {
      throw std::runtime_error("generate: frame " + std::to_string(frame_id) + " at t=" + std::to_string(t) +
                               " s observes no scene point");
    }
  }

  if (truth) {
    truth->points = std::move(points);
    truth->R_CI = config.R_CI_true;
    truth->initial_bias = bias0;
  }
  return data;
}

}  // namespace doge
