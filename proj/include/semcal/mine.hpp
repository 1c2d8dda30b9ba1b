#pragma once

// Neural mutual-information estimation with the Donsker-Varadhan bound
//
//   I(X; Y) >= E_joint[F(x, y)] - log E_marginal[exp F(x, y')]
//
// where F is a small fully connected network over the concatenated label
// vectors [x | y]. Values are in nats.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "semcal/sampling.hpp"

namespace semcal {

/// Adam moments for a flat parameter vector.
struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam descent step: params -= lr * m_hat / (sqrt(v_hat)
/// + epsilon). Lazily sizes the moments on first use.
void adam_step(Eigen::Ref<Eigen::VectorXd> params,
               const Eigen::Ref<const Eigen::VectorXd>& grads, AdamState& state,
               double lr);

/// A joint sample (x, y) and its marginal counterpart (x, y_shuffled).
/// Rows of x are one-hot; rows of y and y_shuffled are probability vectors.
struct MiBatch {
  SoftLabels x;
  SoftLabels y;
  SoftLabels y_shuffled;

  static constexpr int kMinRows = 16;

  Eigen::Index rows() const { return x.rows(); }
  /// Throws InvalidArgument on shape or simplex violations.
  void validate() const;
};

/// Uniform row permutation (Fisher-Yates); fixed points allowed.
std::vector<int> random_permutation(int n, std::mt19937_64& rng);

/// Returns y with its rows permuted; `perm` receives the permutation such that
/// row k of the result is row perm[k] of y.
SoftLabels shuffle_marginal(const SoftLabels& y, std::mt19937_64& rng,
                            std::vector<int>* perm = nullptr);

/// Row-wise one-hot encoding of class IDs.
SoftLabels one_hot_rows(std::span<const int> labels, int num_classes);

struct MineCache;

struct MineGradients {
  Eigen::VectorXd theta;      // d mi / d parameters
  SoftLabels y;               // d mi / d y through the joint term
  SoftLabels y_shuffled;      // d mi / d y_shuffled through the marginal term
};

enum class Denominator {
  /// Exact gradient of the batch estimate.
  Batch,
  /// Marginal term divided by the running EMA instead of the batch mean.
  MovingAverage,
};

/// Statistic network 2C -> H -> H -> 1 with softplus activations, plus its
/// Adam state and the running estimate of the marginal exponential moment.
class MineNetwork {
 public:
  static constexpr int kDefaultHidden = 64;

  MineNetwork() = default;
  /// Hidden layers get fan-in scaled uniform weights; the output layer starts
  /// at zero so the initial estimate is exactly 0.
  MineNetwork(int num_classes, int hidden, std::uint64_t seed);

  int num_classes() const { return num_classes_; }
  int hidden() const { return hidden_; }
  int input_size() const { return 2 * num_classes_; }
  static Eigen::Index parameter_count(int num_classes, int hidden);

  const Eigen::VectorXd& parameters() const { return params_; }
  /// Replaces all weights; invalidates outstanding caches.
  void set_parameters(const Eigen::VectorXd& params);

  /// Bumped on every parameter change. Caches remember the value they saw.
  std::uint64_t version() const { return version_; }

  bool has_ema() const { return has_ema_; }
  /// Running mean of E_marginal[exp F]; 0 before the first backward pass.
  double ema_denominator() const;
  double ema_decay() const { return ema_decay_; }
  void set_ema_decay(double decay) { ema_decay_ = decay; }

  /// Adam step in the direction of increasing MI.
  void ascend(const Eigen::VectorXd& grad_theta, double lr);

  /// F for each row of an N x 2C input.
  Eigen::VectorXd evaluate(const SoftLabels& inputs) const;

  void save(const std::filesystem::path& path) const;
  static MineNetwork load(const std::filesystem::path& path);

 private:
  friend MineGradients mine_backward(MineNetwork&, const MineCache&,
                                     Denominator);

  int num_classes_ = 0;
  int hidden_ = 0;
  Eigen::VectorXd params_;
  std::uint64_t version_ = 0;
  AdamState adam_;
  double log_ema_ = 0.0;
  bool has_ema_ = false;
  double ema_decay_ = 0.99;
};

/// Activations of one pass over a stack of rows.
struct LayerActivations {
  SoftLabels input;     // N x 2C
  SoftLabels z1, h1;    // N x H
  SoftLabels z2, h2;    // N x H
  Eigen::VectorXd f;    // N
};

struct MineCache {
  std::uint64_t version = 0;
  double mi = 0.0;
  LayerActivations joint;
  LayerActivations marginal;
  /// max of F over marginal rows and log mean exp(F) over marginal rows.
  double marginal_max = 0.0;
  double log_mean_exp = 0.0;
};

/// DV estimate with max-subtracted log-mean-exp. Throws NonFinite if the
/// network output overflows.
MineCache mine_forward(const MineNetwork& net, const MiBatch& batch);

/// Gradients of the estimate. Updates the network's EMA from this batch
/// (initialising it on the first call) before using it. Throws StaleCache if
/// the parameters changed since `cache` was produced.
MineGradients mine_backward(MineNetwork& net, const MineCache& cache,
                            Denominator denominator = Denominator::MovingAverage);

/// Exact plug-in MI (nats) of a joint probability table.
double discrete_mutual_information(const Eigen::MatrixXd& joint);

}  // namespace semcal
