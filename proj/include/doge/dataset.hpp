#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "doge/epipolar.hpp"
#include "doge/manifold.hpp"
#include "doge/preintegration.hpp"

namespace doge {

struct ImuRecord {
  std::int64_t t_ns = 0;
  Vector3 omega = Vector3::Zero();          ///< rad/s, IMU frame
  std::optional<Vector3> accel;             ///< m/s^2, when present

  bool operator==(const ImuRecord&) const = default;
};

struct FeatureRecord {
  std::int64_t t_ns = 0;
  int frame_id = 0;
  int feature_id = 0;
  double u = 0.0;
  double v = 0.0;

  bool operator==(const FeatureRecord&) const = default;
};

/// World-from-IMU pose and the true gyroscope bias at one instant.
struct GroundTruthRecord {
  std::int64_t t_ns = 0;
  Vector3 position = Vector3::Zero();
  Eigen::Quaterniond q_WI = Eigen::Quaterniond::Identity();
  Vector3 b_g = Vector3::Zero();

  bool operator==(const GroundTruthRecord& o) const {
    return t_ns == o.t_ns && position == o.position && q_WI.coeffs() == o.q_WI.coeffs() && b_g == o.b_g;
  }
};

/// Camera-from-IMU rotation of the EuRoC MAV cam0 (transpose of its
/// body-from-camera extrinsic).
Matrix3 euroc_R_CI();

/// Sensor calibration shipped with a dataset. R_CI_nominal is the (possibly
/// deformed) extrinsic an estimator starts from; R_CI_true is known only for
/// synthetic data.
struct Calibration {
  CameraIntrinsics camera;
  ImuNoiseModel imu;
  double pixel_sigma = 0.5;
  Matrix3 R_CI_nominal = Matrix3::Identity();
  std::optional<Matrix3> R_CI_true;

  bool operator==(const Calibration& o) const;
};

struct Dataset {
  std::vector<ImuRecord> imu;
  std::vector<FeatureRecord> features;        ///< sorted by (t_ns, feature_id)
  std::vector<GroundTruthRecord> groundtruth; ///< may be empty
  Calibration calib;

  /// Gyroscope stream in seconds.
  std::vector<GyroSample> gyro() const;
  /// Ground truth at exactly t_ns, if recorded.
  const GroundTruthRecord* truth_at(std::int64_t t_ns) const;

  bool operator==(const Dataset&) const = default;
};

inline double ns_to_s(std::int64_t t_ns) { return static_cast<double>(t_ns) * 1e-9; }

/// Writes imu.csv, features.csv, groundtruth.csv (when present) and calib.cfg.
/// Floats are written in shortest round-trip form, so ingest(export(d)) == d.
void export_dataset(const Dataset& data, const std::filesystem::path& dir);

/// Reads a dataset directory written by export_dataset, or a EuRoC-style
/// layout (mav0/imu0/data.csv plus features.csv at the root or in mav0/cam0,
/// optional mav0/state_groundtruth_estimate0/data.csv). Without calib.cfg a
/// EuRoC layout gets the cam0 intrinsics and extrinsic. Errors name the file
/// and, for malformed rows, the line and column.
Dataset ingest_dataset(const std::filesystem::path& dir);

}  // namespace doge
