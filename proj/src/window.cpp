#include "doge/window.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace doge {

std::vector<Correspondence> match(const Keyframe& a, const Keyframe& b) {
  std::vector<Correspondence> out;
  auto ia = a.bearings.begin();
  auto ib = b.bearings.begin();
  while (ia != a.bearings.end() && ib != b.bearings.end()) {
    if (ia->feature_id < ib->feature_id) {
      ++ia;
    } else if (ib->feature_id < ia->feature_id) {
      ++ib;
    } else {
      out.push_back({ia->feature_id, ia->f, ib->f, ia->covariance, ib->covariance});
      ++ia;
      ++ib;
    }
  }
  return out;
}

KeyframeSequence::KeyframeSequence(const Dataset& data, double keyframe_rate, double pixel_sigma)
    : gyro_(data.gyro()), noise_(data.calib.imu) {
  if (!(keyframe_rate > 0.0)) throw std::invalid_argument("KeyframeSequence: keyframe_rate must be positive");
  const auto min_gap = static_cast<std::int64_t>(1e9 / keyframe_rate) - 1'000'000;

  // Group records by frame (features are sorted by time, then feature id).
  std::int64_t last_kf = 0;
  bool have_kf = false;
  std::size_t k = 0;
  while (k < data.features.size()) {
    const std::int64_t t_ns = data.features[k].t_ns;
    std::size_t end = k;
    while (end < data.features.size() && data.features[end].t_ns == t_ns) ++end;
    if (!have_kf || t_ns - last_kf >= min_gap) {
      Keyframe kf;
      kf.frame_id = data.features[k].frame_id;
      kf.t_ns = t_ns;
      kf.t = ns_to_s(t_ns);
      for (std::size_t r = k; r < end; ++r) {
        const auto& rec = data.features[r];
        if (!data.calib.camera.contains(rec.u, rec.v)) continue;
        auto obs = unproject_with_covariance(rec.u, rec.v, data.calib.camera, pixel_sigma);
        obs.feature_id = rec.feature_id;
        obs.frame_id = rec.frame_id;
        if (!kf.bearings.empty() && kf.bearings.back().feature_id == obs.feature_id) continue;
        kf.bearings.push_back(obs);
      }
      keyframes_.push_back(std::move(kf));
      last_kf = t_ns;
      have_kf = true;
    }
    k = end;
  }
}

WindowProblem KeyframeSequence::build_window(std::size_t first, std::size_t count, const CalibState& state,
                                             const SolverConfig& config) const {
  if (count < 2 || first + count > keyframes_.size()) {
    throw std::out_of_range("build_window: keyframes [" + std::to_string(first) + ", " +
                            std::to_string(first + count) + ") outside the sequence of " +
                            std::to_string(keyframes_.size()));
  }
  WindowProblem w;
  w.noise = noise_;
  w.linearization = state;
  for (std::size_t k = first; k < first + count; ++k) {
    w.keyframe_ids.push_back(keyframes_[k].frame_id);
    w.keyframe_times.push_back(keyframes_[k].t);
  }

  // Gyroscope samples covering [t_first, t_last].
  const double t0 = w.keyframe_times.front();
  const double t1 = w.keyframe_times.back();
  auto lo = std::upper_bound(gyro_.begin(), gyro_.end(), t0,
                             [](double t, const GyroSample& s) { return t < s.t; });
  if (lo == gyro_.begin()) throw std::runtime_error("build_window: no gyroscope sample before keyframe time");
  --lo;
  const auto hi = std::lower_bound(lo, gyro_.end(), t1, [](const GyroSample& s, double t) { return s.t < t; });
  w.gyro.assign(lo, hi == gyro_.end() ? hi : hi + 1);

  auto make_pair = [&](std::size_t i, std::size_t j, std::vector<Correspondence> matches) {
    PairProblem p;
    p.frame_i = keyframes_[i].frame_id;
    p.frame_j = keyframes_[j].frame_id;
    p.matches = std::move(matches);
    p.imu = integrate(w.gyro, keyframes_[i].t, keyframes_[j].t, state.b_g, noise_);
    p.cam = to_camera_frame(p.imu, state.R_CI);
    p.reset_weights();
    return p;
  };

  for (std::size_t i = first; i < first + count; ++i) {
    for (std::size_t j = i + 1; j <= i + 2 && j < first + count; ++j) {
      auto m = match(keyframes_[i], keyframes_[j]);
      if (j == i + 2 && m.size() < static_cast<std::size_t>(config.covisibility_min)) continue;
      w.pairs.push_back(make_pair(i, j, std::move(m)));
    }
  }
  const std::size_t last = first + count - 1;
  w.span_pair = make_pair(first, last, match(keyframes_[first], keyframes_[last]));
  return w;
}

double median_parallax_deg(const PairProblem& pair) {
  if (pair.matches.empty()) return 0.0;
  std::vector<double> angles;
  angles.reserve(pair.matches.size());
  for (const auto& c : pair.matches) {
    const Vector3 g = pair.cam.delta_R * c.f_j;
    angles.push_back(std::atan2(c.f_i.cross(g).norm(), c.f_i.dot(g)));
  }
  const auto mid = angles.begin() + static_cast<std::ptrdiff_t>(angles.size() / 2);
  std::nth_element(angles.begin(), mid, angles.end());
  return rad2deg(*mid);
}

}  // namespace doge
