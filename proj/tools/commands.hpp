#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "semcal/calibrator.hpp"
#include "semcal/data_io.hpp"
#include "semcal/init_calib.hpp"
#include "semcal/synth.hpp"

namespace semcal::cli {

/// Exit codes besides the ErrorKind values.
inline constexpr int kExitConverged = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitMaxIters = 2;

/// SEMCAL_LOG: "quiet" (0), "info" (1, default) or "debug" (2). Numbers work too.
int log_level();

struct CalibrateInputs {
  std::vector<PosedScene> scenes;
  LidarGeometry lidar;
  /// Skips the initializer when set.
  std::optional<RigidTransform> init_transform;
  std::optional<RigidTransform> reference;
  CalibConfig cfg;
  InitOptions init;
  /// Result file to write, if any.
  std::optional<fs::path> out;
};

struct CalibrateOutcome {
  int exit_code = kExitConverged;
  CalibrationFile file;
  std::optional<InitialCalibration> initialization;
};

/// Initializer (unless an initial transform is given) followed by the
/// calibrator. Errors propagate as typed exceptions.
CalibrateOutcome cmd_calibrate(const CalibrateInputs& inputs, std::ostream* log = nullptr);

enum class SweepKind { Frames, Noise };
enum class SweepStart { Perturbed, Initializer };

struct SweepOptions {
  SweepKind kind = SweepKind::Frames;
  /// Frame counts or label-noise rates.
  std::vector<double> levels;
  int runs = 20;
  /// Run r uses seed + r for the scene, the start pose and the calibrator.
  std::uint64_t seed = 0;
  /// Frames per run in a noise sweep.
  int frames = 10;
  /// Label noise in a frames sweep.
  double noise = 0.0;
  SweepStart start = SweepStart::Perturbed;
  double start_rot_deg = 5.0;
  double start_trans_m = 0.3;
  SceneSpec scene;
  CalibConfig cfg;
  int jobs = 1;
};

struct SweepRow {
  std::string kind;
  double level = 0;
  std::uint64_t seed = 0;
  double rot_deg = 0;
  double trans_m = 0;
  double mi_final = 0;
};

/// Rows come level by level, seeds ascending, regardless of `jobs`.
std::vector<SweepRow> cmd_sweep(const SweepOptions& options, std::ostream* log = nullptr);

/// Header `kind,level,seed,rot_deg,trans_m,mi_final`, then one line per row.
void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out);

struct LevelSummary {
  double level = 0;
  std::size_t n = 0;
  double mean_rot = 0, std_rot = 0, median_rot = 0;
  double mean_trans = 0, std_trans = 0;
};

/// Sample (n - 1) standard deviations, levels in first-seen order.
std::vector<LevelSummary> summarize(const std::vector<SweepRow>& rows);

/// Box plot of rotation error per level.
void write_box_plot_svg(const std::vector<SweepRow>& rows, std::ostream& out);

/// Full command line entry point; returns the process exit code.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace semcal::cli
