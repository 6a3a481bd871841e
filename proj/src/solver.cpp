#include "doge/solver.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <utility>
#include <vector>
#include <stdexcept>

#include <boost/math/distributions/chi_squared.hpp>
#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace doge {

std::string_view to_string(WeightingMode mode) {
  switch (mode) {
    case WeightingMode::kNone: return "none";
    case WeightingMode::kLambda: return "lambda";
    case WeightingMode::kFeaturePair: return "fp";
    case WeightingMode::kCombined: return "combined";
  }
  return "combined";
}

WeightingMode weighting_mode_from_string(std::string_view name) {
  if (name == "none") return WeightingMode::kNone;
  if (name == "lambda") return WeightingMode::kLambda;
  if (name == "fp") return WeightingMode::kFeaturePair;
  if (name == "combined") return WeightingMode::kCombined;
  throw std::invalid_argument("unknown weighting mode '" + std::string(name) +
                              "' (expected none, lambda, fp or combined)");
}

void SolverConfig::validate() const {
  if (max_loops < 1 || lm_max_iters < 1) throw std::invalid_argument("SolverConfig: loop counts must be >= 1");
  if (!(chi2_alpha > 0.0 && chi2_alpha < 1.0)) throw std::invalid_argument("SolverConfig: chi2_alpha must lie in (0, 1)");
  if (!(epsilon_pass >= 0.0 && epsilon_pass <= 1.0)) throw std::invalid_argument("SolverConfig: epsilon_pass must lie in [0, 1]");
  if (!(weight_min > 0.0 && weight_max >= weight_min)) throw std::invalid_argument("SolverConfig: bad weight clamp");
  if (min_active < 1 || covisibility_min < min_active) throw std::invalid_argument("SolverConfig: bad co-visibility limits");
  if (!(cauchy_scale > 0.0) || !(pixel_sigma >= 0.0)) throw std::invalid_argument("SolverConfig: bad noise scales");
  if (!(cost_tolerance >= 0.0) || !(step_tolerance >= 0.0)) throw std::invalid_argument("SolverConfig: negative tolerance");
  if (!(max_condition > 1.0) || !(max_bias_norm > 0.0)) throw std::invalid_argument("SolverConfig: bad sanity bounds");
}

CalibState CalibState::plus(const Vector6& delta) const {
  return {b_g + delta.head<3>(), R_CI * exp_so3(delta.tail<3>())};
}

Vector6 CalibState::minus(const CalibState& other) const {
  Vector6 d;
  d.head<3>() = b_g - other.b_g;
  d.tail<3>() = boxminus(R_CI, other.R_CI);
  return d;
}

std::size_t WindowProblem::correspondence_count() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.matches.size();
  return n;
}

namespace {

constexpr double kLambdaGuard = 1e-18;

struct Geometry {
  Matrix3 rot;                       // corrected gamma_C
  Eigen::Matrix<double, 3, 6> dphi;  // Jr(phi) [J_bg, J_theta]
};

Geometry geometry(const PairProblem& pair, const Vector3& d_bg, const Vector3& d_theta) {
  const Vector3 phi = correction_vector(pair.cam, d_bg, d_theta);
  Geometry g;
  g.rot = pair.cam.delta_R * exp_so3(phi);
  Eigen::Matrix<double, 3, 6> dphi_dx;
  dphi_dx << pair.cam.d_R_d_bg, pair.cam.d_R_d_theta_right();
  g.dphi = right_jacobian(phi) * dphi_dx;
  return g;
}

bool is_active(const PairProblem& pair, std::size_t k) {
  return pair.active.empty() || pair.active[k] != 0;
}

double weight_of(const PairProblem& pair, std::size_t k) {
  return pair.weights.empty() ? 1.0 : pair.weights[k];
}

Matrix3 accumulate_M(const PairProblem& pair, const Matrix3& rot) {
  Matrix3 m = Matrix3::Zero();
  for (std::size_t k = 0; k < pair.matches.size(); ++k) {
    if (!is_active(pair, k)) continue;
    const Vector3 n = pair.matches[k].f_i.cross(rot * (weight_of(pair, k) * pair.matches[k].f_j));
    m.noalias() += n * n.transpose();
  }
  return m;
}

bool uses_feature_weights(WeightingMode mode) {
  return mode == WeightingMode::kFeaturePair || mode == WeightingMode::kCombined;
}

bool uses_lambda_variance(WeightingMode mode) {
  return mode == WeightingMode::kLambda || mode == WeightingMode::kCombined;
}

// Noise compensation needs the bearing noise model, so plain residuals skip it.
bool compensates(const SolverConfig& config) {
  return config.noise_compensation && config.mode != WeightingMode::kNone;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

namespace {

// Noise covariance of n_k = f_i x (rot f_j') from the bearing covariances.
Matrix3 normal_covariance(const Vector3& f_i, const Vector3& q, const Matrix3& rot, const Matrix3& cov_i,
                          const Matrix3& cov_j) {
  const Matrix3 sq = skew(q);
  const Matrix3 sf = skew(f_i) * rot;
  return sq * cov_i * sq.transpose() + sf * cov_j * sf.transpose();
}

// Eigen-decomposition of M, or of the noise-compensated M - sum_k N_k.
SymmetricEigen3<double> pair_eigen(const PairProblem& pair, const Matrix3& rot, double noise_scale) {
  if (!pair.compensate) noise_scale = 0.0;
  Matrix3 m = Matrix3::Zero();
  for (std::size_t k = 0; k < pair.matches.size(); ++k) {
    if (!is_active(pair, k)) continue;
    const Correspondence& c = pair.matches[k];
    const double w = weight_of(pair, k);
    const Vector3 q = rot * (w * c.f_j);
    const Vector3 n = c.f_i.cross(q);
    m.noalias() += n * n.transpose();
    if (noise_scale > 0.0) m -= noise_scale * normal_covariance(c.f_i, q, rot, c.cov_i, (w * w) * c.cov_j);
  }
  return symmetric_eigen3(m);
}

}  // namespace

double translation_snr(const PairProblem& pair) {
  const Matrix3 rot = pair.cam.delta_R;
  Matrix3 m = Matrix3::Zero();
  Matrix3 noise = Matrix3::Zero();
  for (std::size_t k = 0; k < pair.matches.size(); ++k) {
    if (!is_active(pair, k)) continue;
    const Correspondence& c = pair.matches[k];
    const double w = weight_of(pair, k);
    const Vector3 q = rot * (w * c.f_j);
    const Vector3 n = c.f_i.cross(q);
    m.noalias() += n * n.transpose();
    noise += normal_covariance(c.f_i, q, rot, c.cov_i, (w * w) * c.cov_j);
  }
  const auto eig = symmetric_eigen3(m);
  const Vector3 u = eig.vectors.col(1);
  const double expected = u.dot(noise * u);
  return expected > 0.0 ? eig.values(1) / expected : std::numeric_limits<double>::infinity();
}

PairLinearization linearize_pair(const PairProblem& pair, const Vector3& d_bg, const Vector3& d_theta,
                                 double noise_scale) {
  if (!pair.compensate) noise_scale = 0.0;
  const Geometry geo = geometry(pair, d_bg, d_theta);
  const auto eig = pair_eigen(pair, geo.rot, noise_scale);
  const Vector3 v = eig.vectors.col(0);

  PairLinearization lin;
  lin.v = v;
  lin.eigenvalues = eig.values;
  Matrix6 ata = Matrix6::Zero();
  Eigen::Matrix<double, 6, 3> atn = Eigen::Matrix<double, 6, 3>::Zero();
  Matrix3 m_plain = Matrix3::Zero();
  double noise = 0.0;
  Vector6 noise_gradient = Vector6::Zero();
  for (std::size_t k = 0; k < pair.matches.size(); ++k) {
    if (!is_active(pair, k)) continue;
    const Correspondence& c = pair.matches[k];
    const double w = weight_of(pair, k);
    const Vector3 fj = w * c.f_j;
    const Vector3 q = geo.rot * fj;
    const Vector3 n = c.f_i.cross(q);
    const double e = v.dot(n);
    // d(v^T n)/dphi = -((rot^T (v x f_i)) x f_j)^T
    const Vector3 y = geo.rot.transpose() * v.cross(c.f_i);
    const Vector6 a = -(geo.dphi.transpose() * y.cross(fj));
    lin.lambda += e * e;
    lin.gradient.noalias() += e * a;
    ata.noalias() += a * a.transpose();
    atn.noalias() += a * n.transpose();
    m_plain.noalias() += n * n.transpose();
    // s_k = v^T N_k v = (v x q)^T S_i (v x q) + y^T (w^2 S_j) y and its
    // derivative under rot <- rot Exp(dphi).
    const Vector3 vq = v.cross(q);
    const Vector3 si = c.cov_i * vq;
    const Vector3 sj = (w * w) * (c.cov_j * y);
    noise += vq.dot(si) + y.dot(sj);
    if (noise_scale > 0.0) {
      const Eigen::RowVector3d ds = -2.0 * si.transpose() * skew(v) * geo.rot * skew(fj) +
                                    2.0 * sj.transpose() * skew(y);
      noise_gradient.noalias() += (ds * geo.dphi).transpose();
    }
  }
  lin.noise = noise;
  lin.cost = lin.lambda - noise_scale * noise;
  lin.gradient -= 0.5 * noise_scale * noise_gradient;

  // Eliminate the translation direction. The curvature of the profiled
  // cost subtracts c_j c_j^T / (l_j - l_0) with c_j = A^T N u_j; under noise
  // compensation this can turn indefinite, and the pair then falls back to
  // the Schur complement of the Gram matrix of [A, N U], PSD by construction.
  lin.information = ata;
  const double top = std::abs(eig.values(2)) + std::abs(eig.values(0));
  for (int j = 1; j < 3; ++j) {
    const double gap = eig.values(j) - eig.values(0);
    if (gap > 1e-12 * top && gap > 0.0) {
      const Vector6 c = atn * eig.vectors.col(j);
      lin.information.noalias() -= c * c.transpose() / gap;
    }
  }
  const Eigen::LDLT<Matrix6> check(0.5 * (lin.information + lin.information.transpose()));
  if (check.info() != Eigen::Success || check.vectorD().minCoeff() < -1e-10 * ata.diagonal().maxCoeff()) {
    const Eigen::Matrix<double, 3, 2> u = eig.vectors.rightCols<2>();
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> de(u.transpose() * m_plain * u);
    const Eigen::Matrix<double, 6, 2> c = atn * u;
    const double dmax = std::max(de.eigenvalues()(1), 0.0);
    lin.information = ata;
    for (int j = 0; j < 2; ++j) {
      const double dj = de.eigenvalues()(j);
      if (dj > 1e-12 * dmax && dj > 0.0) {
        const Vector6 cj = c * de.eigenvectors().col(j);
        lin.information.noalias() -= cj * cj.transpose() / dj;
      }
    }
  }
  lin.information = 0.5 * (lin.information + lin.information.transpose()).eval();

  lin.residual.lambda = lin.lambda;
  lin.residual.v = v;
  lin.residual.e = std::sqrt(lin.lambda);
  const double denom = lin.lambda < kLambdaGuard ? std::max(lin.residual.e, 1e-9) : lin.residual.e;
  lin.residual.jacobian = (lin.gradient / denom).transpose();
  return lin;
}

PairResidual residual(const PairProblem& pair, const Vector3& d_bg, const Vector3& d_theta) {
  return linearize_pair(pair, d_bg, d_theta).residual;
}

double pair_lambda(const PairProblem& pair, const Vector3& d_bg, const Vector3& d_theta, double noise_scale) {
  if (!pair.compensate) noise_scale = 0.0;
  const Geometry geo = geometry(pair, d_bg, d_theta);
  const auto eig = pair_eigen(pair, geo.rot, noise_scale);
  const Vector3 v = eig.vectors.col(0);
  double lambda = 0.0;
  for (std::size_t k = 0; k < pair.matches.size(); ++k) {
    if (!is_active(pair, k)) continue;
    const Correspondence& c = pair.matches[k];
    const double w = weight_of(pair, k);
    const Vector3 q = geo.rot * (w * c.f_j);
    const double e = v.dot(c.f_i.cross(q));
    lambda += e * e;
    if (noise_scale > 0.0) {
      const Vector3 vq = v.cross(q);
      const Vector3 y = geo.rot.transpose() * v.cross(c.f_i);
      lambda -= noise_scale * (vq.dot(c.cov_i * vq) + (w * w) * y.dot(c.cov_j * y));
    }
  }
  return lambda;
}

double estimate_noise_scale(const WindowProblem& window) {
  double residual = 0.0;
  double modeled = 0.0;
  for (const auto& pair : window.pairs) {
    if (pair.excluded || !pair.compensate) continue;
    const PairLinearization lin = linearize_pair(pair, Vector3::Zero(), Vector3::Zero());
    residual += lin.lambda / pair.sigma2_lambda;
    modeled += lin.noise / pair.sigma2_lambda;
  }
  return modeled > 0.0 ? std::clamp(residual / modeled, 0.0, 1.0) : 0.0;
}

double lambda_variance(const PairProblem& pair, const Vector3& d_bg, const Vector3& d_theta,
                       double sigma2_floor) {
  const Geometry geo = geometry(pair, d_bg, d_theta);
  const Vector3 v = min_eigenpair(accumulate_M(pair, geo.rot)).vector;
  const Matrix3& R_CI = pair.cam.R_CI;

  double lambda = 0.0;
  double bearing_weighted = 0.0;
  double bearing_mean = 0.0;
  Eigen::RowVector3d gyro_row = Eigen::RowVector3d::Zero();
  double gyro_mean = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < pair.matches.size(); ++k) {
    if (!is_active(pair, k)) continue;
    const Correspondence& c = pair.matches[k];
    const double w = weight_of(pair, k);
    const Vector3 fj = w * c.f_j;
    const Vector3 q = geo.rot * fj;
    const double e = v.dot(c.f_i.cross(q));
    const Vector3 di = v.cross(q);                               // +-de_k/df_i
    const Vector3 dj = geo.rot.transpose() * v.cross(c.f_i);     // de_k/df_j
    const double s = di.dot(c.cov_i * di) + (w * w) * dj.dot(c.cov_j * dj);
    const Eigen::RowVector3d row = -(dj.cross(fj)).transpose() * R_CI;   // de_k/dgamma_I
    lambda += e * e;
    bearing_weighted += e * e * s;
    bearing_mean += s;
    gyro_row += e * row;
    gyro_mean += row * pair.imu.covariance * row.transpose();
    ++count;
  }
  if (count == 0) return sigma2_floor;

  double sigma2 = 0.0;
  if (lambda >= kLambdaGuard) {
    gyro_row /= std::sqrt(lambda);
    sigma2 = bearing_weighted / lambda + gyro_row * pair.imu.covariance * gyro_row.transpose();
  } else {
    sigma2 = (bearing_mean + gyro_mean) / static_cast<double>(count);
  }
  return std::max(sigma2, sigma2_floor);
}

double chi2_threshold(double alpha, int dof) {
  if (!(alpha > 0.0 && alpha < 1.0) || dof < 1) throw std::invalid_argument("chi2_threshold: bad arguments");
  const boost::math::chi_squared dist(dof);
  return boost::math::quantile(boost::math::complement(dist, alpha));
}

FeatureGate fp_weights(const PairProblem& pair, const Vector3& v, const Vector3& d_bg,
                       const Vector3& d_theta, const SolverConfig& config) {
  const Matrix3 rot = apply_correction(pair.cam, d_bg, d_theta);
  const double threshold = chi2_threshold(config.chi2_alpha, 1);
  FeatureGate gate;
  const std::size_t n = pair.matches.size();
  gate.residuals.resize(n);
  gate.sigmas.resize(n);
  gate.weights.resize(n);
  gate.inliers.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Correspondence& c = pair.matches[k];
    const Vector3 q = rot * c.f_j;
    const double e = v.dot(c.f_i.cross(q));
    const Vector3 di = v.cross(q);
    const Vector3 dj = rot.transpose() * v.cross(c.f_i);
    const double var = std::max(di.dot(c.cov_i * di) + dj.dot(c.cov_j * dj), 0.0);
    const double sigma = std::sqrt(var);
    gate.residuals[k] = e;
    gate.sigmas[k] = sigma;
    gate.weights[k] = sigma > 0.0 ? std::clamp(1.0 / sigma, config.weight_min, config.weight_max)
                                  : config.weight_max;
    const bool inlier = var > 0.0 ? e * e <= threshold * var : e == 0.0;
    gate.inliers[k] = inlier ? 1 : 0;
    gate.passed += inlier;
  }
  return gate;
}

int relinearize(WindowProblem& window, const CalibState& state, double reintegration_threshold) {
  int reintegrated = 0;
  auto refresh = [&](PairProblem& pair) {
    if ((state.b_g - pair.imu.bias).norm() > reintegration_threshold) {
      pair.imu = integrate(window.gyro, pair.imu.t_begin, pair.imu.t_end, state.b_g, window.noise);
      ++reintegrated;
    }
    PreintegratedRotation lin = pair.imu;
    lin.delta_R = pair.imu.delta_R * exp_so3(pair.imu.d_R_d_bg * (state.b_g - pair.imu.bias));
    lin.bias = state.b_g;
    pair.cam = to_camera_frame(lin, state.R_CI);
  };
  for (auto& pair : window.pairs) refresh(pair);
  if (window.span_pair) refresh(*window.span_pair);
  window.linearization = state;
  return reintegrated;
}

bool initialization_succeeded(double pass_rate, double condition_number,
                              const SolverConfig& config) {
  return pass_rate >= config.epsilon_pass && std::isfinite(condition_number) &&
         condition_number < config.max_condition;
}

namespace {

// Gradient sensitivity of one pair to the noise of every bearing and of its
// preintegrated rotation, after eliminating the translation direction. The
// reduced row of residual k is a_k - sum_j c_j (u_j^T n_k) / (l_j - l_0).
struct PairSensitivity {
  std::vector<Eigen::Matrix<double, 6, 3>> d_fi;   // per correspondence
  std::vector<Eigen::Matrix<double, 6, 3>> d_fj;
  Eigen::Matrix<double, 6, 3> d_gamma = Eigen::Matrix<double, 6, 3>::Zero();
};

PairSensitivity pair_sensitivity(const PairProblem& pair, double noise_scale) {
  const Geometry geo = geometry(pair, Vector3::Zero(), Vector3::Zero());
  const auto eig = pair_eigen(pair, geo.rot, noise_scale);
  const Vector3 v = eig.vectors.col(0);
  const std::size_t n = pair.matches.size();

  std::vector<Vector6> rows(n, Vector6::Zero());
  Eigen::Matrix<double, 6, 3> atn = Eigen::Matrix<double, 6, 3>::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    if (!is_active(pair, k)) continue;
    const Correspondence& c = pair.matches[k];
    const Vector3 fj = weight_of(pair, k) * c.f_j;
    const Vector3 y = geo.rot.transpose() * v.cross(c.f_i);
    rows[k] = -(geo.dphi.transpose() * y.cross(fj));
    atn.noalias() += rows[k] * c.f_i.cross(geo.rot * fj).transpose();
  }
  const double top = std::abs(eig.values(2)) + std::abs(eig.values(0));
  std::array<Vector6, 2> cj{Vector6::Zero(), Vector6::Zero()};
  std::array<double, 2> gap{0.0, 0.0};
  for (int j = 1; j < 3; ++j) {
    gap[j - 1] = eig.values(j) - eig.values(0);
    if (gap[j - 1] > 1e-12 * top && gap[j - 1] > 0.0) cj[j - 1] = atn * eig.vectors.col(j);
  }

  PairSensitivity out;
  out.d_fi.assign(n, Eigen::Matrix<double, 6, 3>::Zero());
  out.d_fj.assign(n, Eigen::Matrix<double, 6, 3>::Zero());
  for (std::size_t k = 0; k < n; ++k) {
    if (!is_active(pair, k)) continue;
    const Correspondence& c = pair.matches[k];
    const double w = weight_of(pair, k);
    const Vector3 q = geo.rot * (w * c.f_j);
    const Vector3 nk = c.f_i.cross(q);
    Vector6 reduced = rows[k];
    for (int j = 0; j < 2; ++j) {
      if (cj[j].squaredNorm() > 0.0) reduced -= cj[j] * (eig.vectors.col(j + 1).dot(nk) / gap[j]);
    }
    const Vector3 y = geo.rot.transpose() * v.cross(c.f_i);
    // e_k = f_i^T (q x v) = w y^T f_j
    out.d_fi[k] = reduced * q.cross(v).transpose();
    out.d_fj[k] = reduced * (w * y).transpose();
    out.d_gamma.noalias() += reduced * (-(y.cross(w * c.f_j)).transpose() * pair.cam.R_CI);
  }
  return out;
}

}  // namespace

FisherResult fisher_covariance(const WindowProblem& window, const SolverConfig& config) {
  FisherResult out;
  const double compensate = compensates(config) ? estimate_noise_scale(window) : 0.0;
  out.noise_scale = compensate;
  // Gradient covariance accumulated per bearing observation, since one
  // bearing feeds every pair that contains its keyframe.
  std::map<std::pair<int, int>, std::pair<Eigen::Matrix<double, 6, 3>, Matrix3>> per_bearing;
  Matrix6 gradient_cov = Matrix6::Zero();
  // Consecutive-keyframe pairs by first frame, excluded or not; their
  // integration noise is what longer pairs share.
  std::map<int, const PairProblem*> adjacent;
  for (std::size_t k = 0; k + 1 < window.keyframe_ids.size(); ++k) {
    for (const auto& pair : window.pairs) {
      if (pair.frame_i == window.keyframe_ids[k] && pair.frame_j == window.keyframe_ids[k + 1]) {
        adjacent[pair.frame_i] = &pair;
      }
    }
  }
  std::map<int, std::pair<Eigen::Matrix<double, 6, 3>, Matrix3>> per_interval;
  for (const auto& pair : window.pairs) {
    if (pair.excluded) continue;
    const PairLinearization lin = linearize_pair(pair, Vector3::Zero(), Vector3::Zero(), compensate);
    out.information += lin.information / pair.sigma2_lambda;
    const PairSensitivity sens = pair_sensitivity(pair, compensate);
    for (std::size_t k = 0; k < pair.matches.size(); ++k) {
      if (!is_active(pair, k)) continue;
      const Correspondence& c = pair.matches[k];
      const Eigen::Matrix<double, 6, 3> zero = Eigen::Matrix<double, 6, 3>::Zero();
      auto& bi = per_bearing.try_emplace({pair.frame_i, c.feature_id}, zero, c.cov_i).first->second;
      bi.first += sens.d_fi[k] / pair.sigma2_lambda;
      auto& bj = per_bearing.try_emplace({pair.frame_j, c.feature_id}, zero, c.cov_j).first->second;
      bj.first += sens.d_fj[k] / pair.sigma2_lambda;
    }
    const Eigen::Matrix<double, 6, 3> dg = sens.d_gamma / pair.sigma2_lambda;
    // Gyro noise of a longer pair is the transported noise of the adjacent
    // intervals it spans: Exp(eta_ik) = Exp(dR_jk^T eta_ij) Exp(eta_jk).
    std::vector<const PairProblem*> chain;
    for (int at = pair.frame_i; at != pair.frame_j;) {
      const auto it = adjacent.find(at);
      if (it == adjacent.end() || it->second->frame_j == at) break;
      chain.push_back(it->second);
      at = it->second->frame_j;
    }
    if (chain.empty() || chain.back()->frame_j != pair.frame_j) {
      gradient_cov.noalias() += dg * pair.imu.covariance * dg.transpose();
      continue;
    }
    Matrix3 transport = Matrix3::Identity();
    for (auto link = chain.rbegin(); link != chain.rend(); ++link) {
      auto& slot = per_interval.try_emplace((*link)->frame_i, Eigen::Matrix<double, 6, 3>::Zero(),
                                            (*link)->imu.covariance).first->second;
      slot.first += dg * transport;
      transport = transport * (*link)->imu.delta_R.transpose();
    }
  }
  for (const auto& [key, entry] : per_bearing) {
    gradient_cov.noalias() += entry.first * entry.second * entry.first.transpose();
  }
  for (const auto& [key, entry] : per_interval) {
    gradient_cov.noalias() += entry.first * entry.second * entry.first.transpose();
  }
  out.information = 0.5 * (out.information + out.information.transpose()).eval();
  out.gradient_covariance = 0.5 * (gradient_cov + gradient_cov.transpose());
  if (!out.information.allFinite() || !out.gradient_covariance.allFinite()) {
    out.condition_number = std::numeric_limits<double>::infinity();
    return out;
  }
  const Eigen::SelfAdjointEigenSolver<Matrix6> eig(out.information);
  const double lo = eig.eigenvalues()(0);
  const double hi = eig.eigenvalues()(5);
  out.condition_number = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (lo > 0.0) {
    const Matrix6 inv = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                        eig.eigenvectors().transpose();
    out.fisher_covariance = 0.5 * (inv + inv.transpose());
    const Matrix6 sandwich = out.fisher_covariance * out.gradient_covariance * out.fisher_covariance;
    out.covariance = 0.5 * (sandwich + sandwich.transpose());
    out.ok = std::isfinite(out.condition_number) && out.condition_number < config.max_condition;
  }
  return out;
}

FisherResult fisher_covariance(WindowProblem& window, const CalibState& state,
                               const SolverConfig& config) {
  relinearize(window, state, 0.0);
  return fisher_covariance(window, config);
}

namespace {

struct LmOutcome {
  Vector6 delta = Vector6::Zero();
  double cost_start = 0.0;
  double cost_end = 0.0;
  double scale = 0.0;   ///< uncompensated cost at the start, for relative tests
  int iterations = 0;
};

// Levenberg-Marquardt over the first-order correction [d_bg; d_theta] of the
// current linearization. With robust_scale > 0 each pair's cost is the Cauchy
// loss s^2 log(1 + lambda / s^2).
class LmProblem {
 public:
  LmProblem(const WindowProblem& window, double robust_scale, double compensate)
      : window_(window), s2_(robust_scale * robust_scale), robust_(robust_scale > 0.0), compensate_(compensate) {}

  double cost(const Vector6& x) const {
    double total = 0.0;
    for (const auto& pair : window_.pairs) {
      if (pair.excluded) continue;
      const double r = pair_lambda(pair, x.head<3>(), x.tail<3>(), compensate_) / pair.sigma2_lambda;
      total += robust_ ? s2_ * std::log1p(r / s2_) : r;
    }
    return total;
  }

  double scale() const {
    double total = 0.0;
    for (const auto& pair : window_.pairs) {
      if (!pair.excluded) total += pair_lambda(pair, Vector3::Zero(), Vector3::Zero()) / pair.sigma2_lambda;
    }
    return total;
  }

  void normal_equations(const Vector6& x, Matrix6& h, Vector6& g) const {
    h.setZero();
    g.setZero();
    for (const auto& pair : window_.pairs) {
      if (pair.excluded) continue;
      const PairLinearization lin = linearize_pair(pair, x.head<3>(), x.tail<3>(), compensate_);
      const double r = lin.cost / pair.sigma2_lambda;
      const double w = (robust_ ? 1.0 / (1.0 + r / s2_) : 1.0) / pair.sigma2_lambda;
      h.noalias() += w * lin.information;
      g.noalias() += w * lin.gradient;
    }
  }

 private:
  const WindowProblem& window_;
  double s2_;
  bool robust_;
  double compensate_;
};

LmOutcome levenberg_marquardt(const LmProblem& problem, int max_iters) {
  LmOutcome out;
  Vector6 x = Vector6::Zero();
  double cost = problem.cost(x);
  out.cost_start = cost;
  out.scale = std::max(problem.scale(), 1e-300);
  Matrix6 h;
  Vector6 g;
  problem.normal_equations(x, h, g);
  double mu = 1e-4 * std::max(h.diagonal().maxCoeff(), 1e-300);

  for (int it = 0; it < max_iters; ++it) {
    if (out.scale <= 1e-300 || g.squaredNorm() == 0.0) break;
    ++out.iterations;
    const double dmax = std::max(h.diagonal().maxCoeff(), 1e-300);
    Matrix6 damped = h;
    damped.diagonal() += mu * h.diagonal().cwiseMax(1e-9 * dmax);
    const Vector6 step = damped.ldlt().solve(-g);
    if (!step.allFinite()) break;
    const double trial = problem.cost(x + step);
    if (trial < cost) {
      const double decrease = (cost - trial) / out.scale;
      x += step;
      cost = trial;
      mu = std::max(mu / 10.0, 1e-12 * dmax);
      if (decrease < 1e-12 || step.norm() < 1e-14) break;
      problem.normal_equations(x, h, g);
    } else {
      mu *= 10.0;
      if (mu > 1e12 * dmax) break;
    }
  }
  out.delta = x;
  out.cost_end = cost;
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  if (values.size() % 2 == 1) return *mid;
  return 0.5 * (*mid + *std::max_element(values.begin(), mid));
}

// Least-median fit of v on a fresh pair, then drops matches far above the
// median residual. Gross mismatches have normals much longer than inliers and
// would otherwise own the smallest eigenvector. Dropped matches can return at
// the next gate.
void trim_gross_matches(PairProblem& pair, double cutoff, int samples) {
  const std::size_t n = pair.matches.size();
  if (n < 3) return;
  std::vector<Vector3> normals(n);
  for (std::size_t k = 0; k < n; ++k) {
    normals[k] = pair.matches[k].f_i.cross(pair.cam.delta_R * pair.matches[k].f_j);
  }
  std::vector<double> e(n);
  auto median_residual = [&](const Vector3& v) {
    for (std::size_t k = 0; k < n; ++k) e[k] = std::abs(v.dot(normals[k]));
    return median(e);
  };
  Vector3 best = min_eigenpair(build_M(pair, Vector3::Zero(), Vector3::Zero())).vector;
  double best_med = median_residual(best);
  std::mt19937_64 rng(static_cast<std::uint64_t>(pair.frame_i) * 1000003u + static_cast<std::uint64_t>(pair.frame_j));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (int s = 0; s < samples; ++s) {
    const std::size_t a = pick(rng);
    const std::size_t b = pick(rng);
    const Vector3 v = normals[a].cross(normals[b]);
    if (a == b || !(v.norm() > 1e-12)) continue;
    const double med = median_residual(v.normalized());
    if (med < best_med) {
      best_med = med;
      best = v.normalized();
    }
  }
  median_residual(best);
  const double limit = cutoff * 1.4826 * best_med;
  if (!(limit > 1e-150)) return;
  for (std::size_t k = 0; k < n; ++k) pair.active[k] = e[k] <= limit ? 1 : 0;
}

std::size_t used_pairs(const WindowProblem& window) {
  return static_cast<std::size_t>(std::count_if(window.pairs.begin(), window.pairs.end(),
                                                [](const PairProblem& p) { return !p.excluded; }));
}

}  // namespace

GateSummary gate_window(WindowProblem& window, const SolverConfig& config) {
  GateSummary totals;
  // One decision per window: mixing compensated and plain pairs skews the
  // shared noise-scale estimate.
  bool compensate_window = false;
  if (compensates(config)) {
    std::vector<double> snr;
    for (const auto& pair : window.pairs) {
      if (!pair.excluded) snr.push_back(translation_snr(pair));
    }
    compensate_window = !snr.empty() && median(std::move(snr)) >= config.compensation_snr;
  }
  for (auto& pair : window.pairs) pair.compensate = compensate_window;
  const double compensate = compensates(config) ? estimate_noise_scale(window) : 0.0;
  for (auto& pair : window.pairs) {
    if (uses_feature_weights(config.mode) && pair.active_count() == pair.matches.size()) {
      trim_gross_matches(pair, 4.0, 200);
    }
    const PairLinearization lin = linearize_pair(pair, Vector3::Zero(), Vector3::Zero(), compensate);
    const FeatureGate gate = fp_weights(pair, lin.v, Vector3::Zero(), Vector3::Zero(), config);
    totals.passed += gate.passed;
    totals.total += pair.matches.size();
    const bool degenerate = lin.eigenvalues(1) - lin.eigenvalues(0) <=
                            config.repeated_eigen_tolerance * lin.eigenvalues(2);
    if (uses_feature_weights(config.mode) && !degenerate) {
      pair.weights = gate.weights;
      pair.active = gate.inliers;
    } else if (!uses_feature_weights(config.mode)) {
      pair.weights.assign(pair.matches.size(), 1.0);
    }
    pair.excluded = pair.active_count() < static_cast<std::size_t>(config.min_active);
    pair.sigma2_lambda = uses_lambda_variance(config.mode)
                             ? lambda_variance(pair, Vector3::Zero(), Vector3::Zero(), config.sigma2_floor)
                             : 1.0;
  }
  return totals;
}

SolveReport irls_solve(WindowProblem& window, const CalibState& init, const SolverConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  SolveReport report;
  report.state = init;

  auto finish = [&](std::string reason) {
    report.failure_reason = std::move(reason);
    report.success = report.failure_reason.empty();
    report.estimation_ms = elapsed_ms(start);
    return report;
  };

  if (!is_rotation(init.R_CI, 1e-6) || !init.b_g.allFinite()) {
    throw std::invalid_argument("irls_solve: initial state is not a valid CalibState");
  }
  for (auto& pair : window.pairs) {
    pair.reset_weights();
    pair.sigma2_lambda = 1.0;
    pair.excluded = pair.matches.size() < static_cast<std::size_t>(config.min_active);
  }
  if (used_pairs(window) < 2) return finish("fewer than two usable keyframe pairs");

  CalibState state = init;
  for (int loop = 0; loop < config.max_loops; ++loop) {
    const auto t_reint = std::chrono::steady_clock::now();
    report.reintegrations += relinearize(window, state, config.reintegration_threshold);
    report.reintegration_ms += elapsed_ms(t_reint);

    double robust_scale = 0.0;
    if (loop == 0) {
      for (auto& pair : window.pairs) {
        if (!pair.excluded && uses_feature_weights(config.mode)) trim_gross_matches(pair, 4.0, 200);
      }
      std::vector<double> e;
      for (const auto& pair : window.pairs) {
        if (!pair.excluded) e.push_back(std::sqrt(pair_lambda(pair, Vector3::Zero(), Vector3::Zero())));
      }
      robust_scale = config.cauchy_scale * median(std::move(e));
      if (!(robust_scale > 1e-150)) robust_scale = 1.0;
    } else {
      gate_window(window, config);
    }
    if (used_pairs(window) < 2) {
      report.state = state;
      return finish("fewer than two keyframe pairs with enough inliers");
    }

    const double noise_scale = loop > 0 && compensates(config) ? estimate_noise_scale(window) : 0.0;
    const LmOutcome lm = levenberg_marquardt(LmProblem(window, robust_scale, noise_scale), config.lm_max_iters);
    state = state.plus(lm.delta);
    state.R_CI = project_to_so3(state.R_CI);
    report.lm_iterations += lm.iterations;
    report.loop_costs.push_back(lm.cost_end);
    report.loops = loop + 1;

    if (loop >= 1) {
      const double rel = (lm.cost_start - lm.cost_end) / lm.scale;
      if (lm.scale <= 1e-24 || rel < config.cost_tolerance || lm.delta.norm() < config.step_tolerance) {
        report.converged = true;
        break;
      }
    }
  }

  // Final gate at the converged state.
  const auto t_reint = std::chrono::steady_clock::now();
  report.reintegrations += relinearize(window, state, config.reintegration_threshold);
  report.reintegration_ms += elapsed_ms(t_reint);
  const GateSummary gate = gate_window(window, config);
  report.state = state;
  report.pass_rate = gate.total > 0 ? static_cast<double>(gate.passed) / static_cast<double>(gate.total) : 0.0;
  report.pairs_used = used_pairs(window);

  const FisherResult fisher = fisher_covariance(window, config);
  report.condition_number = fisher.condition_number;
  report.covariance = fisher.covariance;

  if (!state.b_g.allFinite() || !is_rotation(state.R_CI, 1e-6)) return finish("non-finite estimate");
  if (report.pairs_used < 2) return finish("fewer than two keyframe pairs with enough inliers");
  if (state.b_g.norm() >= config.max_bias_norm) return finish("bias estimate outside sanity bound");
  if (report.pass_rate < config.epsilon_pass) return finish("chi-square pass rate below threshold");
  if (!fisher.ok || !initialization_succeeded(report.pass_rate, fisher.condition_number, config)) {
    return finish("degenerate information matrix");
  }
  return finish("");
}

}  // namespace doge
