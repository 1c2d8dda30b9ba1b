#pragma once

// Extrinsic refinement by gradient ascent on a neural MI estimate between
// LiDAR point labels and the camera labels they project onto.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <vector>

#include "semcal/mine.hpp"
#include "semcal/scene.hpp"

namespace semcal {

struct CalibConfig {
  double lr_theta = 1e-3;
  double lr_pose = 5e-4;
  int batch_size = 4096;
  int max_iters = 3000;
  /// Both learning rates are multiplied by lr_decay every decay_every iterations.
  int decay_every = 1000;
  double lr_decay = 0.5;
  /// Stop once the mean MI of the latest window beats the previous window by
  /// less than convergence_tol nats.
  int convergence_window = 200;
  double convergence_tol = 1e-3;
  int hidden = MineNetwork::kDefaultHidden;
  /// Propagate pose gradients through the shuffled (marginal) samples too.
  bool marginal_grad = true;
  std::uint64_t seed = 0;
  /// Emit a progress line every this many iterations (0 disables).
  int log_every = 0;

  void validate() const;
};

struct CalibrationResult {
  RigidTransform transform;
  Se3Params v_final;
  std::vector<double> mi_trace;
  int iterations_run = 0;
  int best_iteration = -1;
  double best_mi = 0;
  bool converged = false;
  double wall_time = 0;
};

struct PoseError {
  double rot_deg = 0;
  double trans_m = 0;
};

PoseError pose_error(const RigidTransform& T_est, const RigidTransform& T_ref);

struct IterationStats {
  double mi = 0;
  std::size_t valid = 0;
  /// d mi / d epsilon for the left perturbation exp(epsilon) * T.
  Vector6d grad_pose = Vector6d::Zero();
};

/// One calibration run's state. calibrate() drives it to completion; tests
/// step it manually.
class Calibrator {
 public:
  Calibrator(const std::vector<PosedScene>& scenes, const RigidTransform& T_init,
             const CalibConfig& cfg);

  /// One iteration: sample, estimate, update the network and the pose.
  /// Returns the statistics of the pose the batch was evaluated at.
  IterationStats step();

  /// Estimate and pose gradient at T from a fresh batch without changing the
  /// network or the pose. Uses the exact batch denominator.
  IterationStats probe(const RigidTransform& T);

  const RigidTransform& transform() const { return T_; }
  const MineNetwork& network() const { return net_; }
  int iteration() const { return iteration_; }

 private:
  IterationStats evaluate(const RigidTransform& T, bool update);

  const std::vector<PosedScene>& scenes_;
  CalibConfig cfg_;
  std::vector<std::size_t> offsets_;  // prefix sums of cloud sizes
  MineNetwork net_;
  std::mt19937_64 rng_;
  RigidTransform T_;
  AdamState pose_adam_;
  int iteration_ = 0;
};

/// Runs the loop from T_init until convergence or max_iters and returns the
/// pose with the highest estimate seen. Throws NoValidPoints after 50
/// consecutive iterations with fewer than 10% of the batch projecting into the
/// image. With a reference and a log stream, progress lines read
/// `iter <n> mi <x> rot_err <d> trans_err <m>`.
CalibrationResult calibrate(const std::vector<PosedScene>& scenes,
                            const RigidTransform& T_init, const CalibConfig& cfg,
                            const std::optional<RigidTransform>& reference = std::nullopt,
                            std::ostream* log = nullptr);

}  // namespace semcal
