#include "doge/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "doge/settings.hpp"
#include "doge/window.hpp"

namespace doge {

namespace fs = std::filesystem;

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(sep, pos);
    out.push_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) return out;
    pos = next + 1;
  }
}

// Deformation axis of one (segment, repetition), independent of the cell
// order and of the other sweep dimensions.
Vector3 deformation_axis(std::uint64_t seed, std::size_t segment, int repetition) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(segment), static_cast<std::uint32_t>(repetition)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> gauss;
  Vector3 axis;
  do {
    axis = Vector3(gauss(rng), gauss(rng), gauss(rng));
  } while (axis.norm() < 1e-9);
  return axis.normalized();
}

struct Source {
  int sequence = 0;
  Dataset data;
  Matrix3 R_CI_true = Matrix3::Identity();
  std::optional<KeyframeSequence> keyframes;
};

struct Cell {
  const Source* source = nullptr;
  Segment segment;
  std::size_t window_size = 0;
  double deformation_deg = 0.0;
  WeightingMode mode = WeightingMode::kCombined;
  int repetition = 0;
};

OutcomeRecord run_cell(const Cell& cell, const ExperimentSpec& spec) {
  const Source& src = *cell.source;
  const KeyframeSequence& seq = *src.keyframes;
  const Segment& seg = cell.segment;

  OutcomeRecord rec;
  rec.segment = seg.id;
  rec.sequence = seg.sequence;
  rec.t_start = seg.t_start;
  rec.rotation_deg = seg.rotation_deg;
  rec.window_size = cell.window_size;
  rec.deformation_deg = cell.deformation_deg;
  rec.mode = cell.mode;
  rec.repetition = cell.repetition;

  SolverConfig cfg = spec.solver;
  cfg.mode = cell.mode;
  CalibState nominal;
  nominal.R_CI = project_to_so3(Matrix3(
      src.R_CI_true * exp_so3(deg2rad(cell.deformation_deg) *
                              deformation_axis(spec.seed, seg.id, cell.repetition))));

  auto start = std::chrono::steady_clock::now();
  WindowProblem window = seq.build_window(seg.first_keyframe, cell.window_size, nominal, cfg);
  rec.timing.build_ms = elapsed_ms(start);
  const SolveReport report = irls_solve(window, nominal, cfg);
  rec.timing.estimation_ms = report.estimation_ms;
  rec.timing.reintegration_ms = report.reintegration_ms;
  rec.success = report.success;

  CalibState estimate = report.state;
  std::size_t estimate_first = seg.first_keyframe;
  if (spec.refine && report.success) {
    RefinerConfig rc = spec.refiner;
    rc.solver = cfg;
    rc.window_size = cell.window_size;
    rc.keyframe_limit = seg.end_keyframe;
    start = std::chrono::steady_clock::now();
    const SequenceResult refined = run_sequence(seq, {seg.first_keyframe, report, 1}, rc);
    rec.timing.refine_ms = elapsed_ms(start);
    estimate = refined.windows.back().belief.x;
    estimate_first = refined.windows.back().first_keyframe;
  }

  const GroundTruthRecord* gt = nearest_truth(src.data, seq[estimate_first].t_ns);
  if (!gt) throw std::runtime_error("dataset has no ground truth");
  rec.metrics = compute_metrics(estimate, {gt->b_g, src.R_CI_true});
  WindowProblem at_estimate = seq.build_window(estimate_first, cell.window_size, estimate, cfg);
  rec.metrics.r_cicj_error_deg =
      relative_rotation_error_deg(at_estimate, estimate, src.data, src.R_CI_true).value_or(0.0);
  rec.outcome = classify(rec.success, rec.metrics);
  return rec;
}

std::string mode_name(WeightingMode mode) { return std::string(to_string(mode)); }

nlohmann::ordered_json stats_json(const ErrorStats& s) {
  nlohmann::ordered_json j;
  j["count"] = s.count;
  if (s.count == 0) {
    j["median"] = nullptr;
    j["q1"] = nullptr;
    j["q3"] = nullptr;
    j["iqr"] = nullptr;
  } else {
    j["median"] = s.median;
    j["q1"] = s.q1;
    j["q3"] = s.q3;
    j["iqr"] = s.iqr();
  }
  return j;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

constexpr std::string_view kOutcomeHeader =
    "segment,sequence,t_start,rotation_deg,window_size,deformation_deg,mode,repetition,success,"
    "bias_error,bias_absolute,r_ci_error_deg,r_cicj_error_deg,outcome";
constexpr std::string_view kTimingHeader =
    "segment,window_size,deformation_deg,mode,repetition,build_ms,estimation_ms,reintegration_ms,refine_ms,total_ms";

}  // namespace

void ExperimentSpec::validate() const {
  if (window_sizes.empty() || deformations_deg.empty() || modes.empty()) {
    throw std::invalid_argument("ExperimentSpec: window sizes, deformations and modes must be non-empty");
  }
  if (repetitions < 1) throw std::invalid_argument("ExperimentSpec: repetitions must be >= 1");
  if (sequences < 1) throw std::invalid_argument("ExperimentSpec: sequences must be >= 1");
  if (jobs < 1) throw std::invalid_argument("ExperimentSpec: jobs must be >= 1");
  if (!(segment_duration > 0.0 && segment_stride > 0.0)) {
    throw std::invalid_argument("ExperimentSpec: segment duration and stride must be positive");
  }
  if (!(keyframe_rate > 0.0)) throw std::invalid_argument("ExperimentSpec: keyframe_rate must be positive");
  for (const auto n : window_sizes) {
    if (n < 2) throw std::invalid_argument("ExperimentSpec: window sizes must be >= 2");
  }
  for (const double d : deformations_deg) {
    if (!(d >= 0.0 && d < 180.0)) throw std::invalid_argument("ExperimentSpec: deformations must lie in [0, 180)");
  }
  if (!dataset) scenario.validate();
  solver.validate();
}

ExperimentSpec experiment_from_config(const KeyValueConfig& cfg) {
  ExperimentSpec s;
  const std::string dataset = cfg.get_string("sweep.dataset", "");
  if (!dataset.empty()) s.dataset = dataset;
  s.scenario = scenario_from_config(cfg);
  s.sequences = static_cast<int>(cfg.get_int("sweep.sequences", s.sequences));
  s.segment_duration = cfg.get_double("sweep.segment_duration", s.segment_duration);
  s.segment_stride = cfg.get_double("sweep.segment_stride", s.segment_stride);
  s.min_rotation_deg = cfg.get_double("sweep.min_rotation_deg", s.min_rotation_deg);
  const auto max_segments = cfg.get_int("sweep.max_segments", 0);
  if (max_segments < 0) throw std::invalid_argument("'sweep.max_segments': must be >= 0");
  s.max_segments = static_cast<std::size_t>(max_segments);
  if (cfg.contains("sweep.window_sizes")) {
    s.window_sizes.clear();
    for (const double n : cfg.get_doubles("sweep.window_sizes", {})) {
      if (!(n >= 2.0) || n != std::floor(n)) throw std::invalid_argument("'sweep.window_sizes': integers >= 2 expected");
      s.window_sizes.push_back(static_cast<std::size_t>(n));
    }
  }
  s.deformations_deg = cfg.get_doubles("sweep.deformations_deg", s.deformations_deg);
  if (cfg.contains("sweep.modes")) {
    s.modes.clear();
    for (const auto& m : cfg.get_strings("sweep.modes", {})) s.modes.push_back(weighting_mode_from_string(m));
  }
  s.repetitions = static_cast<int>(cfg.get_int("sweep.repetitions", s.repetitions));
  s.seed = static_cast<std::uint64_t>(cfg.get_int("sweep.seed", static_cast<std::int64_t>(s.seed)));
  s.keyframe_rate = cfg.get_double("window.keyframe_rate", s.keyframe_rate);
  s.refine = cfg.get_bool("sweep.refine", s.refine);
  s.jobs = static_cast<int>(cfg.get_int("sweep.jobs", s.jobs));
  s.output = cfg.get_string("sweep.output", s.output.string());
  s.refiner = refiner_from_config(cfg);
  s.solver = s.refiner.solver;
  s.validate();
  return s;
}

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::kGood: return "good";
    case Outcome::kDetectedBad: return "detected_bad";
    case Outcome::kNonDetectedBad: return "non_detected_bad";
  }
  return "unknown";
}

Outcome outcome_from_string(std::string_view name) {
  if (name == "good") return Outcome::kGood;
  if (name == "detected_bad") return Outcome::kDetectedBad;
  if (name == "non_detected_bad") return Outcome::kNonDetectedBad;
  throw std::invalid_argument("unknown outcome '" + std::string(name) + "'");
}

Metrics compute_metrics(const CalibState& estimate, const CalibState& truth) {
  Metrics m;
  const double diff = (estimate.b_g - truth.b_g).norm();
  const double ref = truth.b_g.norm();
  m.bias_absolute = ref < 1e-6;
  m.bias_error = m.bias_absolute ? diff : 100.0 * diff / ref;
  m.r_ci_error_deg = rad2deg(geodesic_distance(estimate.R_CI, truth.R_CI));
  return m;
}

const GroundTruthRecord* nearest_truth(const Dataset& data, std::int64_t t_ns) {
  const auto& gt = data.groundtruth;
  if (gt.empty()) return nullptr;
  auto it = std::lower_bound(gt.begin(), gt.end(), t_ns,
                             [](const GroundTruthRecord& r, std::int64_t t) { return r.t_ns < t; });
  if (it == gt.end()) return &gt.back();
  if (it != gt.begin() && t_ns - std::prev(it)->t_ns < it->t_ns - t_ns) --it;
  return &*it;
}

std::optional<double> relative_rotation_error_deg(WindowProblem& window, const CalibState& estimate,
                                                  const Dataset& data, const Matrix3& R_CI_true) {
  relinearize(window, estimate, 0.0);
  std::map<int, std::int64_t> frame_time;
  for (const auto& f : data.features) frame_time.emplace(f.frame_id, f.t_ns);
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& pair : window.pairs) {
    const auto ti = frame_time.find(pair.frame_i);
    const auto tj = frame_time.find(pair.frame_j);
    if (ti == frame_time.end() || tj == frame_time.end()) continue;
    const GroundTruthRecord* gi = nearest_truth(data, ti->second);
    const GroundTruthRecord* gj = nearest_truth(data, tj->second);
    if (!gi || !gj) continue;
    const Matrix3 truth = camera_rotation(*gi, R_CI_true).transpose() * camera_rotation(*gj, R_CI_true);
    sum += rad2deg(geodesic_distance(pair.cam.delta_R, truth));
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

Outcome classify(bool success, const Metrics& metrics) {
  if (!success) return Outcome::kDetectedBad;
  const bool bias_ok = metrics.bias_absolute || metrics.bias_error < 50.0;
  return bias_ok && metrics.r_ci_error_deg < 5.0 ? Outcome::kGood : Outcome::kNonDetectedBad;
}

std::vector<Segment> cut_segments(const KeyframeSequence& sequence, double duration, double stride,
                                  double min_rotation_deg) {
  std::vector<Segment> out;
  if (sequence.size() == 0) return out;
  const auto& kfs = sequence.keyframes();
  const auto& gyro = sequence.gyro();
  const double t0 = kfs.front().t;
  const double t_end = kfs.back().t;
  for (int k = 0;; ++k) {
    const double start = t0 + k * stride;
    const double stop = start + duration;
    if (stop > t_end + 1e-6) break;
    Segment seg;
    seg.t_start = start;
    auto first = std::lower_bound(kfs.begin(), kfs.end(), start - 1e-6,
                                  [](const Keyframe& kf, double t) { return kf.t < t; });
    auto last = std::upper_bound(kfs.begin(), kfs.end(), stop + 1e-6,
                                 [](double t, const Keyframe& kf) { return t < kf.t; });
    seg.first_keyframe = static_cast<std::size_t>(first - kfs.begin());
    seg.end_keyframe = static_cast<std::size_t>(last - kfs.begin());
    double angle = 0.0;
    for (std::size_t i = 0; i + 1 < gyro.size(); ++i) {
      const double a = std::max(gyro[i].t, start);
      const double b = std::min(gyro[i + 1].t, stop);
      if (b > a) angle += gyro[i].omega.norm() * (b - a);
    }
    seg.rotation_deg = rad2deg(angle);
    if (seg.rotation_deg >= min_rotation_deg) {
      seg.id = out.size();
      out.push_back(seg);
    }
  }
  return out;
}

std::vector<OutcomeRecord> run_sweep(const ExperimentSpec& spec) {
  spec.validate();
  std::vector<Source> sources;
  if (spec.dataset) {
    Source src;
    src.data = ingest_dataset(*spec.dataset);
    src.R_CI_true = src.data.calib.R_CI_true.value_or(src.data.calib.R_CI_nominal);
    sources.push_back(std::move(src));
  } else {
    sources.resize(static_cast<std::size_t>(spec.sequences));
    for (int k = 0; k < spec.sequences; ++k) {
      ScenarioConfig sc = spec.scenario;
      sc.seed = spec.scenario.seed + static_cast<std::uint64_t>(k);
      if (sc.noise_seed != 0) sc.noise_seed += static_cast<std::uint64_t>(k);
      Source& src = sources[static_cast<std::size_t>(k)];
      src.sequence = k;
      src.data = generate(sc);
      src.R_CI_true = sc.R_CI_true;
    }
  }

  std::vector<Cell> cells;
  std::size_t next_id = 0;
  const std::size_t largest = *std::max_element(spec.window_sizes.begin(), spec.window_sizes.end());
  for (auto& src : sources) {
    src.keyframes.emplace(src.data, spec.keyframe_rate, spec.solver.pixel_sigma);
    for (Segment seg : cut_segments(*src.keyframes, spec.segment_duration, spec.segment_stride,
                                    spec.min_rotation_deg)) {
      if (spec.max_segments > 0 && next_id >= spec.max_segments) break;
      if (seg.end_keyframe - seg.first_keyframe < largest) {
        throw std::invalid_argument("segment " + std::to_string(next_id) + ": " +
                                    std::to_string(seg.end_keyframe - seg.first_keyframe) +
                                    " keyframes, fewer than the window size " + std::to_string(largest));
      }
      seg.id = next_id++;
      seg.sequence = src.sequence;
      for (const auto n : spec.window_sizes) {
        for (const double d : spec.deformations_deg) {
          for (const auto mode : spec.modes) {
            for (int r = 0; r < spec.repetitions; ++r) cells.push_back({&src, seg, n, d, mode, r});
          }
        }
      }
    }
  }
  if (cells.empty()) throw std::runtime_error("sweep: no segment passes the rotation filter");

  std::vector<OutcomeRecord> records(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        records[i] = run_cell(cells[i], spec);
      } catch (const std::exception& e) {
        errors[i] = std::make_exception_ptr(
            std::runtime_error("segment " + std::to_string(cells[i].segment.id) + ": " + e.what()));
      }
    }
  };
  const int jobs = std::min<int>(spec.jobs, static_cast<int>(cells.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return records;
}

ErrorStats error_stats(std::vector<double> values) {
  ErrorStats s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  auto quantile = [&](double p) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  s.median = quantile(0.5);
  s.q1 = quantile(0.25);
  s.q3 = quantile(0.75);
  return s;
}

std::vector<CellSummary> summarize(const std::vector<OutcomeRecord>& records) {
  using Key = std::tuple<std::size_t, double, int>;
  std::map<Key, std::vector<const OutcomeRecord*>> groups;
  for (const auto& r : records) groups[{r.window_size, r.deformation_deg, static_cast<int>(r.mode)}].push_back(&r);
  std::vector<CellSummary> out;
  for (const auto& [key, group] : groups) {
    CellSummary c;
    c.window_size = std::get<0>(key);
    c.deformation_deg = std::get<1>(key);
    c.mode = static_cast<WeightingMode>(std::get<2>(key));
    c.count = group.size();
    std::size_t good = 0, detected = 0, missed = 0;
    std::vector<double> bias, rci, rcicj;
    for (const auto* r : group) {
      good += r->outcome == Outcome::kGood;
      detected += r->outcome == Outcome::kDetectedBad;
      missed += r->outcome == Outcome::kNonDetectedBad;
      c.mean_timing.build_ms += r->timing.build_ms;
      c.mean_timing.estimation_ms += r->timing.estimation_ms;
      c.mean_timing.reintegration_ms += r->timing.reintegration_ms;
      c.mean_timing.refine_ms += r->timing.refine_ms;
      if (!r->success) continue;
      if (!r->metrics.bias_absolute) bias.push_back(r->metrics.bias_error);
      rci.push_back(r->metrics.r_ci_error_deg);
      rcicj.push_back(r->metrics.r_cicj_error_deg);
    }
    const double n = static_cast<double>(c.count);
    c.good_pct = 100.0 * static_cast<double>(good) / n;
    c.detected_bad_pct = 100.0 * static_cast<double>(detected) / n;
    c.non_detected_bad_pct = 100.0 * static_cast<double>(missed) / n;
    c.bias_error = error_stats(std::move(bias));
    c.r_ci_error_deg = error_stats(std::move(rci));
    c.r_cicj_error_deg = error_stats(std::move(rcicj));
    c.mean_timing.build_ms /= n;
    c.mean_timing.estimation_ms /= n;
    c.mean_timing.reintegration_ms /= n;
    c.mean_timing.refine_ms /= n;
    out.push_back(c);
  }
  return out;
}

void write_outcomes_csv(std::ostream& out, const std::vector<OutcomeRecord>& records) {
  out << "# schema_version=" << kReportSchemaVersion << '\n' << kOutcomeHeader << '\n';
  for (const auto& r : records) {
    out << r.segment << ',' << r.sequence << ',' << format_double(r.t_start) << ','
        << format_double(r.rotation_deg) << ',' << r.window_size << ',' << format_double(r.deformation_deg) << ','
        << to_string(r.mode) << ',' << r.repetition << ',' << (r.success ? 1 : 0) << ','
        << format_double(r.metrics.bias_error) << ',' << (r.metrics.bias_absolute ? 1 : 0) << ','
        << format_double(r.metrics.r_ci_error_deg) << ',' << format_double(r.metrics.r_cicj_error_deg) << ','
        << to_string(r.outcome) << '\n';
  }
}

std::string summary_json(const std::vector<CellSummary>& cells) {
  nlohmann::ordered_json root;
  root["schema_version"] = kReportSchemaVersion;
  root["bias_error_unit"] = "percent of |b_true|";
  auto& arr = root["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : cells) {
    nlohmann::ordered_json j;
    j["window_size"] = c.window_size;
    j["deformation_deg"] = c.deformation_deg;
    j["mode"] = mode_name(c.mode);
    j["count"] = c.count;
    j["good_pct"] = c.good_pct;
    j["detected_bad_pct"] = c.detected_bad_pct;
    j["non_detected_bad_pct"] = c.non_detected_bad_pct;
    j["bias_error"] = stats_json(c.bias_error);
    j["r_ci_error_deg"] = stats_json(c.r_ci_error_deg);
    j["r_cicj_error_deg"] = stats_json(c.r_cicj_error_deg);
    arr.push_back(std::move(j));
  }
  return root.dump(2) + "\n";
}

void emit_report(const std::vector<OutcomeRecord>& records, const fs::path& dir) {
  if (records.empty()) throw std::invalid_argument("emit_report: empty table");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  const auto cells = summarize(records);
  {
    auto out = open_out(dir / "outcomes.csv");
    write_outcomes_csv(out, records);
  }
  {
    auto out = open_out(dir / "summary.json");
    out << summary_json(cells);
  }
  {
    auto out = open_out(dir / "timing.csv");
    out << "# schema_version=" << kReportSchemaVersion << '\n' << kTimingHeader << '\n';
    for (const auto& r : records) {
      out << r.segment << ',' << r.window_size << ',' << format_double(r.deformation_deg) << ','
          << to_string(r.mode) << ',' << r.repetition << ',' << format_double(r.timing.build_ms) << ','
          << format_double(r.timing.estimation_ms) << ',' << format_double(r.timing.reintegration_ms) << ','
          << format_double(r.timing.refine_ms) << ',' << format_double(r.timing.total_ms()) << '\n';
    }
  }
  {
    nlohmann::ordered_json root;
    root["schema_version"] = kReportSchemaVersion;
    auto& arr = root["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : cells) {
      nlohmann::ordered_json j;
      j["window_size"] = c.window_size;
      j["deformation_deg"] = c.deformation_deg;
      j["mode"] = mode_name(c.mode);
      j["mean_build_ms"] = c.mean_timing.build_ms;
      j["mean_estimation_ms"] = c.mean_timing.estimation_ms;
      j["mean_reintegration_ms"] = c.mean_timing.reintegration_ms;
      j["mean_refine_ms"] = c.mean_timing.refine_ms;
      j["mean_total_ms"] = c.mean_timing.total_ms();
      arr.push_back(std::move(j));
    }
    auto out = open_out(dir / "timing.json");
    out << root.dump(2) << '\n';
  }
}

std::vector<OutcomeRecord> read_outcomes(const fs::path& csv) {
  std::ifstream in(csv, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + csv.string());
  const std::string path = csv.string();
  std::vector<OutcomeRecord> out;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;

  auto number = [&](std::string_view text, std::size_t col) {
    double v = 0.0;
    if (!parse_double(text, v)) throw ParseError(path, line_no, col, "expected a number, got '" + std::string(text) + "'");
    return v;
  };
  auto integer = [&](std::string_view text, std::size_t col) {
    std::int64_t v = 0;
    if (!parse_int(text, v) || v < 0) {
      throw ParseError(path, line_no, col, "expected a non-negative integer, got '" + std::string(text) + "'");
    }
    return v;
  };
  auto flag = [&](std::string_view text, std::size_t col) {
    if (text != "0" && text != "1") throw ParseError(path, line_no, col, "expected 0 or 1, got '" + std::string(text) + "'");
    return text == "1";
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      const std::string want = "# schema_version=" + std::to_string(kReportSchemaVersion);
      if (line.rfind("# schema_version=", 0) == 0 && line != want) {
        throw ParseError(path, line_no, 1, "unsupported " + line.substr(2));
      }
      continue;
    }
    if (!header) {
      if (line != kOutcomeHeader) throw ParseError(path, line_no, 1, "unexpected header");
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 14) {
      throw ParseError(path, line_no, 1, "expected 14 fields, got " + std::to_string(f.size()));
    }
    OutcomeRecord r;
    r.segment = static_cast<std::size_t>(integer(f[0], 1));
    r.sequence = static_cast<int>(integer(f[1], 2));
    r.t_start = number(f[2], 3);
    r.rotation_deg = number(f[3], 4);
    r.window_size = static_cast<std::size_t>(integer(f[4], 5));
    r.deformation_deg = number(f[5], 6);
    try {
      r.mode = weighting_mode_from_string(f[6]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(path, line_no, 7, e.what());
    }
    r.repetition = static_cast<int>(integer(f[7], 8));
    r.success = flag(f[8], 9);
    r.metrics.bias_error = number(f[9], 10);
    r.metrics.bias_absolute = flag(f[10], 11);
    r.metrics.r_ci_error_deg = number(f[11], 12);
    r.metrics.r_cicj_error_deg = number(f[12], 13);
    try {
      r.outcome = outcome_from_string(f[13]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(path, line_no, 14, e.what());
    }
    out.push_back(r);
  }
  if (!header) throw ParseError(path, line_no, 1, "missing header");

  const fs::path timing = csv.parent_path() / "timing.csv";
  std::ifstream tin(timing, std::ios::binary);
  if (!tin) return out;
  std::size_t row = 0;
  line_no = 0;
  const std::string tpath = timing.string();
  while (std::getline(tin, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#' || line == kTimingHeader) continue;
    const auto f = split(line, ',');
    if (f.size() != 10 || row >= out.size()) throw ParseError(tpath, line_no, 1, "does not match outcomes.csv");
    auto& t = out[row++].timing;
    double v[4];
    for (int k = 0; k < 4; ++k) {
      if (!parse_double(f[5 + k], v[k])) throw ParseError(tpath, line_no, 6 + k, "expected a number");
    }
    t = {v[0], v[1], v[2], v[3]};
  }
  if (row != out.size()) throw ParseError(tpath, line_no, 1, "row count does not match outcomes.csv");
  return out;
}

void write_refine_csv(std::ostream& out, const SequenceResult& result, const Dataset& data,
                      const KeyframeSequence& sequence) {
  const bool truth = data.calib.R_CI_true.has_value() && !data.groundtruth.empty();
  out << "window,first_keyframe,t,status,bg_x,bg_y,bg_z,bias_error,r_ci_error_deg,"
         "var_bg_x,var_bg_y,var_bg_z,var_theta_x,var_theta_y,var_theta_z,parallax_deg,variance_scale,"
         "iterations,estimation_ms\n";
  for (const auto& w : result.windows) {
    const auto& x = w.belief.x;
    out << w.index << ',' << w.first_keyframe << ',' << format_double(w.t) << ',' << to_string(w.status) << ','
        << format_double(x.b_g.x()) << ',' << format_double(x.b_g.y()) << ',' << format_double(x.b_g.z()) << ',';
    if (truth) {
      const GroundTruthRecord* gt = nearest_truth(data, sequence[w.first_keyframe].t_ns);
      const Metrics m = compute_metrics(x, {gt->b_g, *data.calib.R_CI_true});
      out << format_double(m.bias_error) << ',' << format_double(m.r_ci_error_deg) << ',';
    } else {
      out << ",,";
    }
    for (int i = 0; i < 6; ++i) out << format_double(w.belief.P(i, i)) << ',';
    out << format_double(w.parallax_deg) << ',' << format_double(w.variance_scale) << ',' << w.iterations << ','
        << format_double(w.estimation_ms) << '\n';
  }
}

}  // namespace doge
