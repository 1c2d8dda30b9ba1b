#include "semcal/calibrator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

#include "semcal/errors.hpp"

namespace semcal {

namespace {
constexpr int kMaxStarvedIters = 50;
constexpr double kMinValidFraction = 0.1;
}  // namespace

void CalibConfig::validate() const {
  if (!(lr_theta > 0) || !(lr_pose > 0) || !(lr_decay > 0) || max_iters < 1 ||
      decay_every < 1 || convergence_window < 1 || !(convergence_tol > 0) || hidden < 1) {
    throw InvalidArgument("calibration settings must be positive");
  }
  if (batch_size < 64) throw InvalidArgument("batch_size must be at least 64");
  if (log_every < 0) throw InvalidArgument("log_every must be non-negative");
}

PoseError pose_error(const RigidTransform& T_est, const RigidTransform& T_ref) {
  return {rotation_angle(T_est.rotation() * T_ref.rotation().transpose()) * 180.0 /
              std::numbers::pi,
          (T_est.translation() - T_ref.translation()).norm()};
}

Calibrator::Calibrator(const std::vector<PosedScene>& scenes, const RigidTransform& T_init,
                       const CalibConfig& cfg)
    : scenes_(scenes), cfg_(cfg), rng_(cfg.seed), T_(T_init) {
  cfg_.validate();
  if (scenes.empty()) throw InvalidArgument("calibration needs at least one scene");
  const int C = scenes.front().num_classes();
  offsets_.push_back(0);
  for (const auto& s : scenes) {
    if (s.num_classes() != C) throw InvalidArgument("scenes disagree on the class count");
    if (s.K.width != s.image.width() || s.K.height != s.image.height()) {
      throw InvalidArgument("intrinsics do not match the label image size");
    }
    s.K.validate();
    s.cloud.validate(C);
    offsets_.push_back(offsets_.back() + s.cloud.size());
  }
  // Network init uses its own stream so the sampling sequence does not depend
  // on the hidden size.
  net_ = MineNetwork(C, cfg_.hidden, cfg_.seed ^ 0x6d696e65ULL);
}

IterationStats Calibrator::evaluate(const RigidTransform& T, bool update) {
  const int C = net_.num_classes();
  const std::size_t total = offsets_.back();
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);

  // Draw the batch and keep the points that project into their image.
  struct Row {
    int scene;
    std::size_t point;
    Eigen::Vector3d p_cam;
    Eigen::Vector2d uv;
  };
  std::vector<Row> rows;
  rows.reserve(cfg_.batch_size);
  for (int k = 0; k < cfg_.batch_size; ++k) {
    const std::size_t g = pick(rng_);
    const int s = static_cast<int>(std::upper_bound(offsets_.begin(), offsets_.end(), g) -
                                   offsets_.begin()) - 1;
    const std::size_t i = g - offsets_[s];
    const CameraIntrinsics& K = scenes_[s].K;
    const Eigen::Vector3d q = T * scenes_[s].cloud.points[i];
    if (q.z() <= kMinDepth) continue;
    const Eigen::Vector2d uv(K.fx * q.x() / q.z() + K.cx, K.fy * q.y() / q.z() + K.cy);
    if (!(uv.x() >= 0 && uv.x() <= K.width - 1 && uv.y() >= 0 && uv.y() <= K.height - 1)) {
      continue;
    }
    rows.push_back({s, i, q, uv});
  }

  IterationStats stats;
  stats.valid = rows.size();
  if (rows.size() < static_cast<std::size_t>(MiBatch::kMinRows) ||
      rows.size() < kMinValidFraction * cfg_.batch_size) {
    return stats;
  }
  const auto n = static_cast<Eigen::Index>(rows.size());

  // Sample soft labels scene by scene.
  MiBatch batch;
  batch.x = SoftLabels::Zero(n, C);
  batch.y.resize(n, C);
  SoftLabelGradient dy{SoftLabels(n, C), SoftLabels(n, C)};
  for (std::size_t s = 0; s < scenes_.size(); ++s) {
    std::vector<Eigen::Index> idx;
    std::vector<Eigen::Vector2d> uv;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (rows[r].scene == static_cast<int>(s)) {
        idx.push_back(r);
        uv.push_back(rows[r].uv);
      }
    }
    if (idx.empty()) continue;
    const std::vector<std::uint8_t> valid(idx.size(), 1);
    SoftLabels values;
    SoftLabelGradient grad;
    sample_bilinear_with_grad(scenes_[s].image, uv, valid, values, grad);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto r = idx[k];
      const auto kk = static_cast<Eigen::Index>(k);
      batch.y.row(r) = values.row(kk);
      dy.du.row(r) = grad.du.row(kk);
      dy.dv.row(r) = grad.dv.row(kk);
    }
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    batch.x(r, scenes_[rows[r].scene].cloud.labels[rows[r].point]) = 1.0;
  }
  std::vector<int> perm;
  batch.y_shuffled = shuffle_marginal(batch.y, rng_, &perm);

  const MineCache cache = mine_forward(net_, batch);
  stats.mi = cache.mi;
  MineGradients g;
  if (update) {
    g = mine_backward(net_, cache, Denominator::MovingAverage);
  } else {
    MineNetwork scratch = net_;
    g = mine_backward(scratch, cache, Denominator::Batch);
  }

  // Row k of y_shuffled is row perm[k] of y.
  SoftLabels dmi_dy = g.y;
  if (cfg_.marginal_grad) {
    for (Eigen::Index k = 0; k < n; ++k) dmi_dy.row(perm[k]) += g.y_shuffled.row(k);
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Vector2d g_uv(dmi_dy.row(r).dot(dy.du.row(r)), dmi_dy.row(r).dot(dy.dv.row(r)));
    stats.grad_pose += pixel_jacobian(rows[r].p_cam, scenes_[rows[r].scene].K).transpose() * g_uv;
  }

  if (update) {
    const double decay = std::pow(cfg_.lr_decay, iteration_ / cfg_.decay_every);
    net_.ascend(g.theta, cfg_.lr_theta * decay);
    Vector6d delta = Vector6d::Zero();
    adam_step(delta, -stats.grad_pose, pose_adam_, cfg_.lr_pose * decay);
    T_ = exp_se3(delta) * T_;
  }
  return stats;
}

IterationStats Calibrator::step() {
  const RigidTransform at = T_;
  IterationStats stats = evaluate(at, true);
  ++iteration_;
  return stats;
}

IterationStats Calibrator::probe(const RigidTransform& T) { return evaluate(T, false); }

CalibrationResult calibrate(const std::vector<PosedScene>& scenes, const RigidTransform& T_init,
                            const CalibConfig& cfg,
                            const std::optional<RigidTransform>& reference, std::ostream* log) {
  const auto start = std::chrono::steady_clock::now();
  log_se3(T_init);  // rejects initial rotations on the branch cut
  Calibrator calib(scenes, T_init, cfg);

  CalibrationResult result;
  result.transform = T_init;
  result.mi_trace.reserve(cfg.max_iters);
  RigidTransform best = T_init;
  int starved = 0;
  const int W = cfg.convergence_window;
  double window_sum = 0, previous_window = 0;
  bool have_previous = false;

  for (int it = 0; it < cfg.max_iters; ++it) {
    const RigidTransform at = calib.transform();
    const IterationStats stats = calib.step();
    if (stats.valid < kMinValidFraction * cfg.batch_size) {
      if (++starved >= kMaxStarvedIters) {
        throw NoValidPoints("fewer than 10% of sampled points projected into the image for " +
                            std::to_string(kMaxStarvedIters) + " iterations");
      }
    } else {
      starved = 0;
    }
    result.mi_trace.push_back(stats.mi);
    result.iterations_run = it + 1;
    if (result.best_iteration < 0 || stats.mi > result.best_mi) {
      result.best_mi = stats.mi;
      result.best_iteration = it;
      best = at;
    }
    if (log && cfg.log_every > 0 && (it + 1) % cfg.log_every == 0) {
      *log << "iter " << it + 1 << " mi " << stats.mi;
      if (reference) {
        const PoseError e = pose_error(calib.transform(), *reference);
        *log << " rot_err " << e.rot_deg << " trans_err " << e.trans_m;
      }
      *log << '\n';
    }
    window_sum += stats.mi;
    if ((it + 1) % W == 0) {
      const double mean = window_sum / W;
      window_sum = 0;
      if (have_previous && mean - previous_window < cfg.convergence_tol) {
        result.converged = true;
        break;
      }
      previous_window = mean;
      have_previous = true;
    }
  }
  // Re-derive the transform from its coordinates so the two agree exactly.
  result.v_final = log_se3(best);
  result.transform = exp_se3(result.v_final);
  result.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace semcal
