#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "doge/config.hpp"
#include "doge/dataset.hpp"
#include "doge/refiner.hpp"
#include "doge/simworld.hpp"
#include "doge/solver.hpp"

namespace doge {

inline constexpr int kReportSchemaVersion = 1;

/// One sweep: segments cut from a dataset or from synthetic sequences, each
/// solved for every (window size, deformation, mode, repetition).
struct ExperimentSpec {
  std::optional<std::filesystem::path> dataset;   ///< synthetic when empty
  ScenarioConfig scenario;       ///< sequence k uses seed scenario.seed + k
  int sequences = 1;
  double segment_duration = 20.0;   ///< s
  double segment_stride = 5.0;      ///< s between segment starts
  double min_rotation_deg = 20.0;   ///< integrated gyro rotation a segment needs
  std::size_t max_segments = 0;     ///< 0 keeps every segment
  std::vector<std::size_t> window_sizes{10};
  std::vector<double> deformations_deg{10.0};
  std::vector<WeightingMode> modes{WeightingMode::kCombined};
  int repetitions = 1;
  std::uint64_t seed = 1;           ///< deformation axes
  double keyframe_rate = 4.0;       ///< Hz
  bool refine = false;              ///< run the refiner over each segment after initializing
  SolverConfig solver;              ///< mode is overridden per cell
  RefinerConfig refiner;            ///< window size and solver are overridden per cell
  int jobs = 1;
  std::filesystem::path output = "report";

  void validate() const;
};

/// Reads `sweep.*` keys, plus the scenario, solver and refiner blocks.
ExperimentSpec experiment_from_config(const KeyValueConfig& cfg);

enum class Outcome { kGood, kDetectedBad, kNonDetectedBad };

std::string_view to_string(Outcome outcome);
Outcome outcome_from_string(std::string_view name);

struct Metrics {
  double bias_error = 0.0;        ///< percent of |b_true|, or rad/s when bias_absolute
  bool bias_absolute = false;     ///< |b_true| < 1e-6
  double r_ci_error_deg = 0.0;
  double r_cicj_error_deg = 0.0;  ///< mean over window pairs, 0 without pairs
};

/// Bias and extrinsic errors of an estimate. The bias error is
/// 100 |b_est - b_true| / |b_true|, or |b_est - b_true| with the absolute flag
/// when |b_true| < 1e-6. The extrinsic error is the angle of R_est R_true^T.
Metrics compute_metrics(const CalibState& estimate, const CalibState& truth);

/// Mean angle between each pair's bias-corrected camera-frame rotation and
/// the ground-truth relative camera rotation. The window is relinearized at
/// the estimate (reintegrating where needed). Pairs without ground truth at
/// both keyframe times are skipped; returns nullopt when none remains.
std::optional<double> relative_rotation_error_deg(WindowProblem& window, const CalibState& estimate,
                                                  const Dataset& data, const Matrix3& R_CI_true);

/// Ground-truth record nearest to t_ns, nullptr without ground truth.
const GroundTruthRecord* nearest_truth(const Dataset& data, std::int64_t t_ns);

/// good iff success, bias error below 50 % (ignored for an absolute error)
/// and extrinsic error below 5 degrees; detected bad iff not success.
Outcome classify(bool success, const Metrics& metrics);

struct StageTiming {
  double build_ms = 0.0;          ///< matching and preintegration
  double estimation_ms = 0.0;     ///< bias and extrinsic estimation, reintegration included
  double reintegration_ms = 0.0;  ///< part of estimation_ms
  double refine_ms = 0.0;
  double total_ms() const { return build_ms + estimation_ms + refine_ms; }
};

struct OutcomeRecord {
  std::size_t segment = 0;
  int sequence = 0;
  double t_start = 0.0;           ///< s
  double rotation_deg = 0.0;      ///< integrated gyro rotation of the segment
  std::size_t window_size = 0;
  double deformation_deg = 0.0;
  WeightingMode mode = WeightingMode::kCombined;
  int repetition = 0;
  bool success = false;
  Metrics metrics;
  Outcome outcome = Outcome::kDetectedBad;
  StageTiming timing;             ///< not part of the deterministic report
};

struct Segment {
  std::size_t id = 0;
  int sequence = 0;
  std::size_t first_keyframe = 0;
  std::size_t end_keyframe = 0;   ///< exclusive
  double t_start = 0.0;
  double rotation_deg = 0.0;
};

/// Segments of a keyframe sequence: starts every `stride` seconds, each
/// `duration` seconds long, kept when the gyro rotates through at least
/// min_rotation_deg within it (|omega| integrated over the samples).
std::vector<Segment> cut_segments(const KeyframeSequence& sequence, double duration, double stride,
                                  double min_rotation_deg);

/// Runs every cell. Cells run on `jobs` threads; each draws its deformation
/// axis from (seed, segment, repetition), so results do not depend on
/// scheduling. Errors name the segment.
std::vector<OutcomeRecord> run_sweep(const ExperimentSpec& spec);

struct ErrorStats {
  std::size_t count = 0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr() const { return q3 - q1; }
};

/// Linear-interpolation quantiles; count 0 for an empty sample.
ErrorStats error_stats(std::vector<double> values);

struct CellSummary {
  std::size_t window_size = 0;
  double deformation_deg = 0.0;
  WeightingMode mode = WeightingMode::kCombined;
  std::size_t count = 0;
  double good_pct = 0.0;
  double detected_bad_pct = 0.0;
  double non_detected_bad_pct = 0.0;
  ErrorStats bias_error;          ///< over successful records with a relative bias error
  ErrorStats r_ci_error_deg;      ///< over successful records
  ErrorStats r_cicj_error_deg;    ///< over successful records
  StageTiming mean_timing;
};

/// Groups records by (window size, deformation, mode), in that sort order.
std::vector<CellSummary> summarize(const std::vector<OutcomeRecord>& records);

/// Writes outcomes.csv and summary.json (deterministic for a fixed seed) and
/// timing.csv (wall times) into dir, creating it. Throws on an empty table or
/// an unwritable path.
void emit_report(const std::vector<OutcomeRecord>& records, const std::filesystem::path& dir);

void write_outcomes_csv(std::ostream& out, const std::vector<OutcomeRecord>& records);
std::string summary_json(const std::vector<CellSummary>& cells);

/// Reads outcomes.csv as written by emit_report; timing.csv alongside it is
/// merged in when present.
std::vector<OutcomeRecord> read_outcomes(const std::filesystem::path& csv);

/// Per-window refinement rows: index, time, status, bias, covariance diagonal,
/// and errors against ground truth when the dataset carries it.
void write_refine_csv(std::ostream& out, const SequenceResult& result, const Dataset& data,
                      const KeyframeSequence& sequence);

}  // namespace doge
