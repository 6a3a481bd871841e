#pragma once

#include <cstdint>
#include <vector>

#include "doge/dataset.hpp"
#include "doge/epipolar.hpp"
#include "doge/solver.hpp"

namespace doge {

/// Bearings of one keyframe, sorted by feature id.
struct Keyframe {
  int frame_id = -1;
  std::int64_t t_ns = 0;
  double t = 0.0;
  std::vector<BearingObservation> bearings;
};

/// Features shared by two keyframes (merge on feature id).
std::vector<Correspondence> match(const Keyframe& a, const Keyframe& b);

/// Keyframes of a dataset with their bearings, plus the gyroscope stream.
///
/// Frames are taken greedily in time order whenever at least 1/keyframe_rate
/// (less 1 ms of slack) has passed since the previous keyframe. Bearings use
/// the assumed pixel noise, not the dataset's.
class KeyframeSequence {
 public:
  KeyframeSequence(const Dataset& data, double keyframe_rate, double pixel_sigma);

  std::size_t size() const { return keyframes_.size(); }
  const Keyframe& operator[](std::size_t k) const { return keyframes_.at(k); }
  const std::vector<Keyframe>& keyframes() const { return keyframes_; }
  const std::vector<GyroSample>& gyro() const { return gyro_; }
  const ImuNoiseModel& noise() const { return noise_; }

  /// Window over keyframes [first, first + count). Adjacent pairs are always
  /// included, (i, i+2) pairs only with at least covisibility_min shared
  /// features. Preintegrations are computed at state.b_g and expressed at
  /// state.R_CI. The span pair joins the oldest and newest keyframes.
  WindowProblem build_window(std::size_t first, std::size_t count, const CalibState& state,
                             const SolverConfig& config) const;

 private:
  std::vector<Keyframe> keyframes_;
  std::vector<GyroSample> gyro_;
  ImuNoiseModel noise_;
};

/// Median angle, in degrees, between f_i and gamma_C f_j over the pair's
/// correspondences: the parallax left after compensating rotation.
double median_parallax_deg(const PairProblem& pair);

}  // namespace doge
