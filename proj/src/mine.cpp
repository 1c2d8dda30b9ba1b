#include "semcal/mine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <string>

#include "semcal/errors.hpp"

namespace semcal {

void adam_step(Eigen::Ref<Eigen::VectorXd> params,
               const Eigen::Ref<const Eigen::VectorXd>& grads, AdamState& state,
               double lr) {
  if (params.size() != grads.size()) {
    throw InvalidArgument("Adam parameter and gradient sizes differ");
  }
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= lr * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + state.epsilon);
}

void MiBatch::validate() const {
  const Eigen::Index B = x.rows();
  if (B < kMinRows) {
    throw InvalidArgument("MI batch needs at least " +
                          std::to_string(kMinRows) + " rows, got " +
                          std::to_string(B));
  }
  if (y.rows() != B || y_shuffled.rows() != B || y.cols() != x.cols() ||
      y_shuffled.cols() != x.cols()) {
    throw InvalidArgument("MI batch blocks have mismatched shapes");
  }
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto row = x.row(i);
    if (std::abs(row.sum() - 1.0) > 1e-12 || std::abs(row.maxCoeff() - 1.0) > 1e-12 ||
        row.minCoeff() != 0.0) {
      throw InvalidArgument("row " + std::to_string(i) + " of x is not one-hot");
    }
    if (std::abs(y.row(i).sum() - 1.0) > 1e-6 ||
        std::abs(y_shuffled.row(i).sum() - 1.0) > 1e-6) {
      throw InvalidArgument("row " + std::to_string(i) +
                            " of y is not a probability vector");
    }
  }
}

std::vector<int> random_permutation(int n, std::mt19937_64& rng) {
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(perm[i], perm[pick(rng)]);
  }
  return perm;
}

SoftLabels shuffle_marginal(const SoftLabels& y, std::mt19937_64& rng,
                            std::vector<int>* perm) {
  if (y.rows() < 2) {
    throw InvalidArgument("shuffling needs at least two rows");
  }
  std::vector<int> p = random_permutation(static_cast<int>(y.rows()), rng);
  SoftLabels out(y.rows(), y.cols());
  for (Eigen::Index k = 0; k < y.rows(); ++k) out.row(k) = y.row(p[k]);
  if (perm) *perm = std::move(p);
  return out;
}

SoftLabels one_hot_rows(std::span<const int> labels, int num_classes) {
  SoftLabels out = SoftLabels::Zero(static_cast<Eigen::Index>(labels.size()),
                                    num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw LabelRangeError("label " + std::to_string(labels[i]) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
    out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Network

namespace {

using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

// Flat layout: W1 (H x I), b1 (H), W2 (H x H), b2 (H), w3 (H), b3 (1);
// matrices column-major.
struct Offsets {
  Eigen::Index w1, b1, w2, b2, w3, b3, total;

  Offsets(int in, int h) {
    w1 = 0;
    b1 = w1 + static_cast<Eigen::Index>(h) * in;
    w2 = b1 + h;
    b2 = w2 + static_cast<Eigen::Index>(h) * h;
    w3 = b2 + h;
    b3 = w3 + h;
    total = b3 + 1;
  }
};

template <class Vec>
struct Layers {
  Vec& p;
  Offsets o;
  int in, h;

  auto W1() const { return Eigen::Map<const Eigen::MatrixXd>(p.data() + o.w1, h, in); }
  auto b1() const { return Eigen::Map<const Eigen::VectorXd>(p.data() + o.b1, h); }
  auto W2() const { return Eigen::Map<const Eigen::MatrixXd>(p.data() + o.w2, h, h); }
  auto b2() const { return Eigen::Map<const Eigen::VectorXd>(p.data() + o.b2, h); }
  auto w3() const { return Eigen::Map<const Eigen::VectorXd>(p.data() + o.w3, h); }
  double b3() const { return p[o.b3]; }
};

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void forward_layers(const Eigen::VectorXd& params, int in, int h,
                    LayerActivations& a) {
  const Layers<const Eigen::VectorXd> L{params, Offsets(in, h), in, h};
  a.z1.noalias() = a.input * L.W1().transpose();
  a.z1.rowwise() += L.b1().transpose();
  a.h1 = a.z1.unaryExpr(&softplus);
  a.z2.noalias() = a.h1 * L.W2().transpose();
  a.z2.rowwise() += L.b2().transpose();
  a.h2 = a.z2.unaryExpr(&softplus);
  a.f.noalias() = a.h2 * L.w3();
  a.f.array() += L.b3();
}

// Accumulates dF-weighted parameter gradients into `grad` and returns
// d(sum_i dF_i F_i)/d(input).
SoftLabels backward_layers(const Eigen::VectorXd& params, int in, int h,
                           const LayerActivations& a, const Eigen::VectorXd& dF,
                           Eigen::VectorXd& grad) {
  const Offsets o(in, h);
  const Layers<const Eigen::VectorXd> L{params, o, in, h};
  MatMap gW1(grad.data() + o.w1, h, in);
  VecMap gb1(grad.data() + o.b1, h);
  MatMap gW2(grad.data() + o.w2, h, h);
  VecMap gb2(grad.data() + o.b2, h);
  VecMap gw3(grad.data() + o.w3, h);

  gw3.noalias() += a.h2.transpose() * dF;
  grad[o.b3] += dF.sum();

  SoftLabels dz2 = (dF * L.w3().transpose()).array() *
                   a.z2.unaryExpr(&sigmoid).array();
  gW2.noalias() += dz2.transpose() * a.h1;
  gb2.noalias() += dz2.colwise().sum().transpose();

  SoftLabels dz1 = (dz2 * L.W2()).array() * a.z1.unaryExpr(&sigmoid).array();
  gW1.noalias() += dz1.transpose() * a.input;
  gb1.noalias() += dz1.colwise().sum().transpose();

  return dz1 * L.W1();
}

SoftLabels concat(const SoftLabels& a, const SoftLabels& b) {
  SoftLabels out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

}  // namespace

Eigen::Index MineNetwork::parameter_count(int num_classes, int hidden) {
  return Offsets(2 * num_classes, hidden).total;
}

MineNetwork::MineNetwork(int num_classes, int hidden, std::uint64_t seed)
    : num_classes_(num_classes), hidden_(hidden) {
  if (num_classes < 2 || hidden < 1) {
    throw InvalidArgument("MINE network needs >= 2 classes and >= 1 hidden unit");
  }
  const int in = input_size();
  const Offsets o(in, hidden);
  params_ = Eigen::VectorXd::Zero(o.total);
  std::mt19937_64 rng(seed);
  auto fill = [&](Eigen::Index begin, Eigen::Index count, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < count; ++i) params_[begin + i] = dist(rng);
  };
  fill(o.w1, static_cast<Eigen::Index>(hidden) * in, in);
  fill(o.b1, hidden, in);
  fill(o.w2, static_cast<Eigen::Index>(hidden) * hidden, hidden);
  fill(o.b2, hidden, hidden);
  // w3 and b3 stay zero.
}

void MineNetwork::set_parameters(const Eigen::VectorXd& params) {
  if (params.size() != parameter_count(num_classes_, hidden_)) {
    throw InvalidArgument("parameter vector has the wrong length");
  }
  if (!params.allFinite()) {
    throw NonFinite("MINE parameters contain a non-finite entry");
  }
  params_ = params;
  ++version_;
}

double MineNetwork::ema_denominator() const {
  return has_ema_ ? std::exp(log_ema_) : 0.0;
}

void MineNetwork::ascend(const Eigen::VectorXd& grad_theta, double lr) {
  adam_step(params_, -grad_theta, adam_, lr);
  if (!params_.allFinite()) {
    throw NonFinite("MINE parameters diverged");
  }
  ++version_;
}

Eigen::VectorXd MineNetwork::evaluate(const SoftLabels& inputs) const {
  if (inputs.cols() != input_size()) {
    throw InvalidArgument("network input has the wrong width");
  }
  LayerActivations a;
  a.input = inputs;
  forward_layers(params_, input_size(), hidden_, a);
  return a.f;
}

void MineNetwork::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "semcal-mine 1\n"
      << num_classes_ << ' ' << hidden_ << '\n'
      << params_.size() << '\n'
      << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (Eigen::Index i = 0; i < params_.size(); ++i) out << params_[i] << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

MineNetwork MineNetwork::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "semcal-mine") {
    throw ParseError(path.string(), 1, "not a MINE checkpoint");
  }
  if (version != 1) {
    throw SchemaVersionError("unsupported checkpoint version " +
                             std::to_string(version));
  }
  int classes = 0, hidden = 0;
  Eigen::Index count = 0;
  if (!(in >> classes >> hidden >> count)) {
    throw ParseError(path.string(), 2, "malformed header");
  }
  MineNetwork net(classes, hidden, 0);
  if (count != parameter_count(classes, hidden)) {
    throw ParseError(path.string(), 3, "parameter count does not match layer sizes");
  }
  Eigen::VectorXd params(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    if (!(in >> params[i])) {
      throw ParseError(path.string(), static_cast<std::size_t>(4 + i),
                       "truncated parameter list");
    }
  }
  net.set_parameters(params);
  return net;
}

// ---------------------------------------------------------------------------
// Estimator

MineCache mine_forward(const MineNetwork& net, const MiBatch& batch) {
  if (batch.x.cols() != net.num_classes()) {
    throw InvalidArgument("batch class count does not match the network");
  }
  batch.validate();
  MineCache cache;
  cache.version = net.version();
  cache.joint.input = concat(batch.x, batch.y);
  cache.marginal.input = concat(batch.x, batch.y_shuffled);
  forward_layers(net.parameters(), net.input_size(), net.hidden(), cache.joint);
  forward_layers(net.parameters(), net.input_size(), net.hidden(), cache.marginal);

  const Eigen::VectorXd& fm = cache.marginal.f;
  cache.marginal_max = fm.maxCoeff();
  cache.log_mean_exp =
      cache.marginal_max +
      std::log((fm.array() - cache.marginal_max).exp().mean());
  cache.mi = cache.joint.f.mean() - cache.log_mean_exp;
  if (!std::isfinite(cache.mi)) {
    throw NonFinite("MI estimate is not finite; the statistic network diverged");
  }
  return cache;
}

MineGradients mine_backward(MineNetwork& net, const MineCache& cache,
                            Denominator denominator) {
  if (cache.version != net.version()) {
    throw StaleCache("network parameters changed after the forward pass");
  }
  const int C = net.num_classes();
  const auto B = static_cast<double>(cache.joint.f.size());

  if (!net.has_ema_) {
    net.log_ema_ = cache.log_mean_exp;
    net.has_ema_ = true;
  } else {
    // log(d * ema + (1 - d) * batch) without leaving the log domain.
    const double a = std::log(net.ema_decay_) + net.log_ema_;
    const double b = std::log1p(-net.ema_decay_) + cache.log_mean_exp;
    const double m = std::max(a, b);
    net.log_ema_ = m + std::log(std::exp(a - m) + std::exp(b - m));
  }
  const double log_denominator = denominator == Denominator::MovingAverage
                                     ? net.log_ema_
                                     : cache.log_mean_exp;

  MineGradients out;
  out.theta = Eigen::VectorXd::Zero(net.params_.size());

  const Eigen::VectorXd d_joint = Eigen::VectorXd::Constant(cache.joint.f.size(), 1.0 / B);
  // d/dF_i of -log mean exp(F) = -exp(F_i) / (B * mean exp F).
  const Eigen::VectorXd d_marginal =
      -((cache.marginal.f.array() - log_denominator).exp() / B).matrix();

  const SoftLabels din_joint = backward_layers(
      net.params_, net.input_size(), net.hidden(), cache.joint, d_joint, out.theta);
  const SoftLabels din_marginal =
      backward_layers(net.params_, net.input_size(), net.hidden(),
                      cache.marginal, d_marginal, out.theta);
  out.y = din_joint.rightCols(C);
  out.y_shuffled = din_marginal.rightCols(C);
  if (!out.theta.allFinite()) {
    throw NonFinite("MINE gradient is not finite");
  }
  return out;
}

double discrete_mutual_information(const Eigen::MatrixXd& joint) {
  const double total = joint.sum();
  if (!(total > 0)) throw InvalidArgument("joint table has no mass");
  const Eigen::MatrixXd p = joint / total;
  const Eigen::VectorXd px = p.rowwise().sum();
  const Eigen::RowVectorXd py = p.colwise().sum();
  double mi = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (p(i, j) > 0) mi += p(i, j) * std::log(p(i, j) / (px[i] * py[j]));
    }
  }
  return mi;
}

}  // namespace semcal
