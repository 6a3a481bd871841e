#include "doge/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "doge/config.hpp"

namespace doge {

namespace fs = std::filesystem;

Matrix3 euroc_R_CI() {
  Matrix3 R_BC;
  R_BC << 0.0148655429818, -0.999880929698, 0.00414029679422,
          0.999557249008, 0.0149672133247, 0.025715529948,
          -0.0257744366974, 0.00375618835797, 0.999660727178;
  return project_to_so3(Matrix3(R_BC.transpose()));
}

bool Calibration::operator==(const Calibration& o) const {
  const auto cam_eq = camera.fx == o.camera.fx && camera.fy == o.camera.fy && camera.cx == o.camera.cx &&
                      camera.cy == o.camera.cy && camera.width == o.camera.width &&
                      camera.height == o.camera.height;
  const auto imu_eq = imu.gyro_noise_density == o.imu.gyro_noise_density &&
                      imu.gyro_random_walk == o.imu.gyro_random_walk &&
                      imu.sample_interval == o.imu.sample_interval;
  const auto truth_eq = R_CI_true.has_value() == o.R_CI_true.has_value() &&
                        (!R_CI_true || *R_CI_true == *o.R_CI_true);
  return cam_eq && imu_eq && pixel_sigma == o.pixel_sigma && R_CI_nominal == o.R_CI_nominal && truth_eq;
}

std::vector<GyroSample> Dataset::gyro() const {
  std::vector<GyroSample> out;
  out.reserve(imu.size());
  for (const auto& r : imu) out.push_back({ns_to_s(r.t_ns), r.omega});
  return out;
}

const GroundTruthRecord* Dataset::truth_at(std::int64_t t_ns) const {
  const auto it = std::lower_bound(groundtruth.begin(), groundtruth.end(), t_ns,
                                   [](const GroundTruthRecord& r, std::int64_t t) { return r.t_ns < t; });
  return it != groundtruth.end() && it->t_ns == t_ns ? &*it : nullptr;
}

namespace {

// ---------------------------------------------------------------------------
// Writing

std::string join_matrix(const Matrix3& m) {
  std::string s;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (!s.empty()) s += ", ";
      s += format_double(m(r, c));
    }
  }
  return s;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

void write_vec(std::ostream& out, const Vector3& v) {
  out << ',' << format_double(v.x()) << ',' << format_double(v.y()) << ',' << format_double(v.z());
}

// ---------------------------------------------------------------------------
// Reading

struct Field {
  std::string_view text;
  std::size_t column;   // 1-based
};

class CsvReader {
 public:
  explicit CsvReader(const fs::path& path) : path_(path.string()), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open '" + path_ + "'");
  }

  // Next data row (comments and blank lines skipped); false at end of file.
  bool next(std::vector<Field>& fields) {
    while (std::getline(in_, line_)) {
      ++line_no_;
      if (!line_.empty() && line_.back() == '\r') line_.pop_back();
      const auto first = line_.find_first_not_of(" \t");
      if (first == std::string::npos || line_[first] == '#') continue;
      fields.clear();
      std::size_t start = 0;
      while (true) {
        const auto comma = line_.find(',', start);
        const auto end = comma == std::string::npos ? line_.size() : comma;
        fields.push_back({std::string_view(line_).substr(start, end - start), start + 1});
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(std::size_t column, const std::string& what) const {
    throw ParseError(path_, line_no_, column, what);
  }

  void expect_columns(const std::vector<Field>& f, std::size_t lo, std::size_t hi) const {
    if (f.size() < lo || f.size() > hi) {
      const std::string want = lo == hi ? std::to_string(lo) : std::to_string(lo) + " to " + std::to_string(hi);
      fail(1, "expected " + want + " columns, found " + std::to_string(f.size()));
    }
  }

  double real(const Field& f) const {
    double v = 0.0;
    if (!parse_double(f.text, v)) fail(f.column, "expected a number, found '" + std::string(f.text) + "'");
    return v;
  }

  std::int64_t integer(const Field& f) const {
    std::int64_t v = 0;
    if (!parse_int(f.text, v)) fail(f.column, "expected an integer, found '" + std::string(f.text) + "'");
    return v;
  }

  Vector3 vec(const std::vector<Field>& f, std::size_t at) const {
    return {real(f[at]), real(f[at + 1]), real(f[at + 2])};
  }

 private:
  std::string path_;
  std::ifstream in_;
  std::string line_;
  std::size_t line_no_ = 0;
};

std::vector<ImuRecord> read_imu(const fs::path& path) {
  CsvReader csv(path);
  std::vector<ImuRecord> out;
  std::vector<Field> f;
  while (csv.next(f)) {
    if (f.size() != 4) csv.expect_columns(f, 7, 7);
    ImuRecord r;
    r.t_ns = csv.integer(f[0]);
    r.omega = csv.vec(f, 1);
    if (f.size() == 7) r.accel = csv.vec(f, 4);
    if (!out.empty() && r.t_ns <= out.back().t_ns) csv.fail(f[0].column, "timestamps not strictly increasing");
    out.push_back(r);
  }
  return out;
}

std::vector<FeatureRecord> read_features(const fs::path& path) {
  CsvReader csv(path);
  std::vector<FeatureRecord> out;
  std::vector<Field> f;
  while (csv.next(f)) {
    csv.expect_columns(f, 5, 5);
    FeatureRecord r;
    r.t_ns = csv.integer(f[0]);
    r.frame_id = static_cast<int>(csv.integer(f[1]));
    r.feature_id = static_cast<int>(csv.integer(f[2]));
    r.u = csv.real(f[3]);
    r.v = csv.real(f[4]);
    out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(), [](const FeatureRecord& a, const FeatureRecord& b) {
    return a.t_ns != b.t_ns ? a.t_ns < b.t_ns : a.feature_id < b.feature_id;
  });
  return out;
}

// Native layout: t_ns, p(3), q_WI (w, x, y, z), b_g(3).
// EuRoC layout: t_ns, p(3), q(4), v(3), b_w(3), b_a(3).
std::vector<GroundTruthRecord> read_groundtruth(const fs::path& path) {
  CsvReader csv(path);
  std::vector<GroundTruthRecord> out;
  std::vector<Field> f;
  while (csv.next(f)) {
    if (f.size() != 11) csv.expect_columns(f, 17, 17);
    GroundTruthRecord r;
    r.t_ns = csv.integer(f[0]);
    r.position = csv.vec(f, 1);
    r.q_WI = Eigen::Quaterniond(csv.real(f[4]), csv.real(f[5]), csv.real(f[6]), csv.real(f[7]));
    r.b_g = csv.vec(f, f.size() == 11 ? 8 : 11);
    if (!out.empty() && r.t_ns <= out.back().t_ns) csv.fail(f[0].column, "timestamps not strictly increasing");
    out.push_back(r);
  }
  return out;
}

Matrix3 read_matrix(const KeyValueConfig& cfg, const std::string& key, const Matrix3& fallback) {
  if (!cfg.contains(key)) return fallback;
  const auto v = cfg.get_doubles(key, {});
  if (v.size() != 9) throw std::runtime_error("'" + key + "' needs 9 comma-separated values");
  Matrix3 m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = v[static_cast<std::size_t>(i)];
  if (!is_rotation(m, 1e-6)) throw std::runtime_error("'" + key + "' is not a rotation matrix");
  return m;
}

Calibration read_calib(const fs::path& path) {
  Calibration c;
  if (!fs::exists(path)) return c;
  const auto cfg = KeyValueConfig::load(path.string());
  c.camera.fx = cfg.get_double("camera.fx", c.camera.fx);
  c.camera.fy = cfg.get_double("camera.fy", c.camera.fy);
  c.camera.cx = cfg.get_double("camera.cx", c.camera.cx);
  c.camera.cy = cfg.get_double("camera.cy", c.camera.cy);
  c.camera.width = static_cast<int>(cfg.get_int("camera.width", c.camera.width));
  c.camera.height = static_cast<int>(cfg.get_int("camera.height", c.camera.height));
  c.imu.gyro_noise_density = cfg.get_double("imu.gyro_noise_density", c.imu.gyro_noise_density);
  c.imu.gyro_random_walk = cfg.get_double("imu.gyro_random_walk", c.imu.gyro_random_walk);
  c.imu.sample_interval = cfg.get_double("imu.sample_interval", c.imu.sample_interval);
  c.pixel_sigma = cfg.get_double("pixel_sigma", c.pixel_sigma);
  c.R_CI_nominal = read_matrix(cfg, "R_CI_nominal", c.R_CI_nominal);
  if (cfg.contains("R_CI_true")) c.R_CI_true = read_matrix(cfg, "R_CI_true", Matrix3::Identity());
  c.camera.validate();
  c.imu.validate();
  return c;
}

fs::path first_existing(std::initializer_list<fs::path> candidates) {
  for (const auto& p : candidates) {
    if (fs::exists(p)) return p;
  }
  return {};
}

}  // namespace

void export_dataset(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "imu.csv");
    out << "# t_ns,wx,wy,wz[,ax,ay,az]\n";
    for (const auto& r : data.imu) {
      out << r.t_ns;
      write_vec(out, r.omega);
      if (r.accel) write_vec(out, *r.accel);
      out << '\n';
    }
  }
  {
    auto out = open_out(dir / "features.csv");
    out << "# t_ns,frame_id,feature_id,u,v\n";
    for (const auto& r : data.features) {
      out << r.t_ns << ',' << r.frame_id << ',' << r.feature_id << ',' << format_double(r.u) << ','
          << format_double(r.v) << '\n';
    }
  }
  if (!data.groundtruth.empty()) {
    auto out = open_out(dir / "groundtruth.csv");
    out << "# t_ns,px,py,pz,qw,qx,qy,qz,bgx,bgy,bgz\n";
    for (const auto& r : data.groundtruth) {
      out << r.t_ns;
      write_vec(out, r.position);
      out << ',' << format_double(r.q_WI.w());
      write_vec(out, r.q_WI.vec());
      write_vec(out, r.b_g);
      out << '\n';
    }
  } else {
    fs::remove(dir / "groundtruth.csv");
  }
  {
    const auto& c = data.calib;
    auto out = open_out(dir / "calib.cfg");
    out << "# pinhole intrinsics, pixels\n"
        << "camera.fx = " << format_double(c.camera.fx) << '\n'
        << "camera.fy = " << format_double(c.camera.fy) << '\n'
        << "camera.cx = " << format_double(c.camera.cx) << '\n'
        << "camera.cy = " << format_double(c.camera.cy) << '\n'
        << "camera.width = " << c.camera.width << '\n'
        << "camera.height = " << c.camera.height << '\n'
        << "# gyroscope noise\n"
        << "imu.gyro_noise_density = " << format_double(c.imu.gyro_noise_density) << '\n'
        << "imu.gyro_random_walk = " << format_double(c.imu.gyro_random_walk) << '\n'
        << "imu.sample_interval = " << format_double(c.imu.sample_interval) << '\n'
        << "pixel_sigma = " << format_double(c.pixel_sigma) << '\n'
        << "# camera-from-IMU rotation, row-major\n"
        << "R_CI_nominal = " << join_matrix(c.R_CI_nominal) << '\n';
    if (c.R_CI_true) out << "R_CI_true = " << join_matrix(*c.R_CI_true) << '\n';
  }
}

Dataset ingest_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory '" + dir.string() + "' not found");
  Dataset d;
  const bool euroc = fs::exists(dir / "mav0");

  const fs::path imu = euroc ? dir / "mav0" / "imu0" / "data.csv" : dir / "imu.csv";
  if (!fs::exists(imu)) throw std::runtime_error("missing IMU file '" + imu.string() + "'");
  d.imu = read_imu(imu);

  const fs::path features =
      euroc ? first_existing({dir / "features.csv", dir / "mav0" / "cam0" / "features.csv"}) : dir / "features.csv";
  if (features.empty() || !fs::exists(features)) {
    throw std::runtime_error("missing feature file '" + (features.empty() ? (dir / "features.csv") : features).string() + "'");
  }
  d.features = read_features(features);

  const fs::path gt = euroc ? first_existing({dir / "groundtruth.csv",
                                              dir / "mav0" / "state_groundtruth_estimate0" / "data.csv"})
                            : dir / "groundtruth.csv";
  if (!gt.empty() && fs::exists(gt)) d.groundtruth = read_groundtruth(gt);

  if (euroc && !fs::exists(dir / "calib.cfg")) {
    d.calib.R_CI_nominal = euroc_R_CI();
  } else {
    d.calib = read_calib(dir / "calib.cfg");
  }
  return d;
}

}  // namespace doge
