#include "doge/settings.hpp"

#include <stdexcept>
#include <string>

namespace doge {

ScenarioConfig scenario_from_config(const KeyValueConfig& cfg, ScenarioConfig s) {
  s.seed = static_cast<std::uint64_t>(cfg.get_int("scenario.seed", static_cast<std::int64_t>(s.seed)));
  s.noise_seed =
      static_cast<std::uint64_t>(cfg.get_int("scenario.noise_seed", static_cast<std::int64_t>(s.noise_seed)));
  s.point_count = static_cast<int>(cfg.get_int("scenario.point_count", s.point_count));
  s.duration = cfg.get_double("scenario.duration", s.duration);
  s.rotation_prefix = cfg.get_double("scenario.rotation_prefix", s.rotation_prefix);
  s.pixel_sigma = cfg.get_double("scenario.pixel_sigma", s.pixel_sigma);
  s.imu_noise = cfg.get_bool("scenario.imu_noise", s.imu_noise);
  s.bias_random_walk = cfg.get_bool("scenario.bias_random_walk", s.bias_random_walk);
  if (cfg.contains("scenario.bias")) {
    const auto b = cfg.get_doubles("scenario.bias", {});
    if (b.size() != 3) throw std::invalid_argument("'scenario.bias': expected 3 numbers");
    s.bias = Vector3(b[0], b[1], b[2]);
  }
  s.bias_magnitude = cfg.get_double("scenario.bias_magnitude", s.bias_magnitude);
  if (cfg.contains("scenario.R_CI_true")) {
    const auto r = cfg.get_doubles("scenario.R_CI_true", {});
    if (r.size() != 9) throw std::invalid_argument("'scenario.R_CI_true': expected 9 numbers, row-major");
    s.R_CI_true = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(r.data());
  }
  s.extrinsic_offset_deg = cfg.get_double("scenario.extrinsic_offset_deg", s.extrinsic_offset_deg);
  s.keyframe_rate = cfg.get_double("scenario.keyframe_rate", s.keyframe_rate);
  s.max_features = static_cast<int>(cfg.get_int("scenario.max_features", s.max_features));
  s.outlier_ratio = cfg.get_double("scenario.outlier_ratio", s.outlier_ratio);
  s.excitation = cfg.get_double("scenario.excitation", s.excitation);
  s.excitation_modulation = cfg.get_double("scenario.excitation_modulation", s.excitation_modulation);
  s.modulation_period = cfg.get_double("scenario.modulation_period", s.modulation_period);
  s.translation_amplitude = cfg.get_double("scenario.translation_amplitude", s.translation_amplitude);
  s.translation_ramp = cfg.get_double("scenario.translation_ramp", s.translation_ramp);
  s.min_depth = cfg.get_double("scenario.min_depth", s.min_depth);
  s.max_depth = cfg.get_double("scenario.max_depth", s.max_depth);
  s.cone_half_angle_deg = cfg.get_double("scenario.cone_half_angle_deg", s.cone_half_angle_deg);

  s.imu.gyro_noise_density = cfg.get_double("imu.gyro_noise_density", s.imu.gyro_noise_density);
  s.imu.gyro_random_walk = cfg.get_double("imu.gyro_random_walk", s.imu.gyro_random_walk);
  if (cfg.contains("imu.rate_hz")) {
    const double rate = cfg.get_double("imu.rate_hz", 0.0);
    if (!(rate > 0.0)) throw std::invalid_argument("'imu.rate_hz': must be positive");
    s.imu.sample_interval = 1.0 / rate;
  }
  s.imu.sample_interval = cfg.get_double("imu.sample_interval", s.imu.sample_interval);

  s.camera.fx = cfg.get_double("camera.fx", s.camera.fx);
  s.camera.fy = cfg.get_double("camera.fy", s.camera.fy);
  s.camera.cx = cfg.get_double("camera.cx", s.camera.cx);
  s.camera.cy = cfg.get_double("camera.cy", s.camera.cy);
  s.camera.width = static_cast<int>(cfg.get_int("camera.width", s.camera.width));
  s.camera.height = static_cast<int>(cfg.get_int("camera.height", s.camera.height));
  s.validate();
  return s;
}

SolverConfig solver_from_config(const KeyValueConfig& cfg, SolverConfig s) {
  s.max_loops = static_cast<int>(cfg.get_int("solver.max_loops", s.max_loops));
  s.lm_max_iters = static_cast<int>(cfg.get_int("solver.lm_max_iters", s.lm_max_iters));
  s.chi2_alpha = cfg.get_double("solver.chi2_alpha", s.chi2_alpha);
  s.epsilon_pass = cfg.get_double("solver.epsilon_pass", s.epsilon_pass);
  s.weight_min = cfg.get_double("solver.weight_min", s.weight_min);
  s.weight_max = cfg.get_double("solver.weight_max", s.weight_max);
  s.covisibility_min = static_cast<int>(cfg.get_int("solver.covisibility_min", s.covisibility_min));
  s.min_active = static_cast<int>(cfg.get_int("solver.min_active", s.min_active));
  s.cauchy_scale = cfg.get_double("solver.cauchy_scale", s.cauchy_scale);
  s.reintegration_threshold = cfg.get_double("solver.reintegration_threshold", s.reintegration_threshold);
  s.max_condition = cfg.get_double("solver.max_condition", s.max_condition);
  s.cost_tolerance = cfg.get_double("solver.cost_tolerance", s.cost_tolerance);
  s.step_tolerance = cfg.get_double("solver.step_tolerance", s.step_tolerance);
  s.pixel_sigma = cfg.get_double("solver.pixel_sigma", s.pixel_sigma);
  s.sigma2_floor = cfg.get_double("solver.sigma2_floor", s.sigma2_floor);
  s.repeated_eigen_tolerance = cfg.get_double("solver.repeated_eigen_tolerance", s.repeated_eigen_tolerance);
  s.max_bias_norm = cfg.get_double("solver.max_bias_norm", s.max_bias_norm);
  s.noise_compensation = cfg.get_bool("solver.noise_compensation", s.noise_compensation);
  s.compensation_snr = cfg.get_double("solver.compensation_snr", s.compensation_snr);
  if (cfg.contains("solver.mode")) s.mode = weighting_mode_from_string(cfg.get_string("solver.mode", ""));
  s.validate();
  return s;
}

RefinerConfig refiner_from_config(const KeyValueConfig& cfg, RefinerConfig r) {
  r.solver = solver_from_config(cfg, r.solver);
  r.ieskf.max_iterations = static_cast<int>(cfg.get_int("ieskf.max_iterations", r.ieskf.max_iterations));
  r.ieskf.step_tolerance = cfg.get_double("ieskf.step_tolerance", r.ieskf.step_tolerance);
  r.ieskf.divergence_limit = static_cast<int>(cfg.get_int("ieskf.divergence_limit", r.ieskf.divergence_limit));
  const auto window = cfg.get_int("window.size", static_cast<std::int64_t>(r.window_size));
  if (window < 2) throw std::invalid_argument("'window.size': need at least 2 keyframes");
  r.window_size = static_cast<std::size_t>(window);
  r.parallax_handoff_deg = cfg.get_double("refiner.parallax_handoff_deg", r.parallax_handoff_deg);
  r.use_prior = cfg.get_bool("refiner.use_prior", r.use_prior);
  r.stop_at_handoff = cfg.get_bool("refiner.stop_at_handoff", r.stop_at_handoff);
  r.deflate = cfg.get_bool("refiner.deflate", r.deflate);
  r.share_overlap = cfg.get_bool("refiner.share_overlap", r.share_overlap);
  r.gate_passes = static_cast<int>(cfg.get_int("refiner.gate_passes", r.gate_passes));
  r.validate();
  return r;
}

void reject_unused(const KeyValueConfig& cfg, std::initializer_list<std::string_view> prefixes) {
  std::string keys;
  for (const auto prefix : prefixes) {
    for (const auto& key : cfg.unused(prefix)) keys += (keys.empty() ? "" : ", ") + key;
  }
  if (!keys.empty()) throw std::invalid_argument("unknown configuration keys: " + keys);
}

}  // namespace doge
