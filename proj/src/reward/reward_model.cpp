#include "reward/reward_model.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

#include "core/error.hpp"

namespace handover {

namespace {

constexpr std::string_view kSnapshotMagic = "handover-reward-model";
constexpr int kSnapshotVersion = 1;

void write_vector(std::ostream& out, std::string_view key, const Eigen::VectorXd& v) {
  out << key << ' ' << v.size();
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << v(i);
  out << '\n';
}

Eigen::VectorXd read_vector(std::istream& in, std::string_view key) {
  std::string k;
  Eigen::Index n = 0;
  if (!(in >> k >> n) || k != key || n < 0) {
    fail(ErrorCode::InvalidArgument, "reward model snapshot: expected '" + std::string(key) + "'");
  }
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(in >> v(i))) fail(ErrorCode::InvalidArgument, "reward model snapshot: truncated " + k);
  }
  return v;
}

double read_scalar(std::istream& in, std::string_view key) {
  std::string k;
  double v = 0;
  if (!(in >> k >> v) || k != key) {
    fail(ErrorCode::InvalidArgument, "reward model snapshot: expected '" + std::string(key) + "'");
  }
  return v;
}

}  // namespace

Standardizer Standardizer::identity(Eigen::Index dim) {
  return Standardizer{Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

Standardizer Standardizer::from_bounds(const ContextBounds& context, const ParamBounds& params) {
  Standardizer s;
  s.center.resize(kJointDim);
  s.scale.resize(kJointDim);
  const double uniform_std = 1.0 / std::sqrt(12.0);
  s.center(0) = 0.5 * (context.lo + context.hi);
  s.scale(0) = (context.hi - context.lo) * uniform_std;
  for (std::size_t i = 0; i < kParamDim; ++i) {
    const auto d = static_cast<Eigen::Index>(i + kContextDim);
    s.center(d) = 0.5 * (params.lo[i] + params.hi[i]);
    s.scale(d) = (params.hi[i] - params.lo[i]) * uniform_std;
  }
  return s;
}

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& raw) const {
  if (raw.size() != center.size()) fail(ErrorCode::InvalidArgument, "point dimension mismatch");
  return (raw - center).cwiseQuotient(scale);
}

RewardModel::RewardModel(Standardizer standardizer, KernelHyper hyper, NoiseTerms noise)
    : standardizer_(std::move(standardizer)), hyper_(std::move(hyper)), noise_(noise) {
  hyper_.validate();
  noise_.validate();
  if (hyper_.dim() != standardizer_.dim()) {
    fail(ErrorCode::InvalidArgument, "kernel and standardizer dimensions differ");
  }
  if ((standardizer_.scale.array() <= 0.0).any()) {
    fail(ErrorCode::InvalidArgument, "standardizer scales must be positive");
  }
}

void RewardModel::set_hyper(KernelHyper hyper, NoiseTerms noise) {
  hyper.validate();
  noise.validate();
  if (hyper.dim() != standardizer_.dim()) {
    fail(ErrorCode::InvalidArgument, "kernel and standardizer dimensions differ");
  }
  hyper_ = std::move(hyper);
  noise_ = noise;
  fitted_ = false;
}

FeedbackDataset RewardModel::standardize(const FeedbackDataset& raw) const {
  FeedbackDataset out = raw;
  for (auto& p : out.points) p = standardizer_.apply(p);
  return out;
}

void RewardModel::fit(FeedbackDataset raw, const std::optional<Eigen::VectorXd>& init) {
  FeedbackDataset data = standardize(raw);
  data.validate();
  const GramFactor gram(gram_matrix(data.points, hyper_), hyper_.signal_var);
  MapResult map;
  if (data.size() > 0) {
    map = map_estimate(data, gram, noise_, init);
  } else {
    map.rewards = Eigen::VectorXd::Zero(0);
    map.alpha = Eigen::VectorXd::Zero(0);
  }
  points_ = std::move(data.points);
  gram_ = gram;
  map_rewards_ = map.rewards;
  alpha_ = map.alpha;
  last_fit_ = std::move(map);
  fitted_ = true;
}

void RewardModel::refactor() {
  gram_ = GramFactor(gram_matrix(points_, hyper_), hyper_.signal_var);
  alpha_ = points_.empty() ? Eigen::VectorXd::Zero(0) : gram_.solve(map_rewards_);
}

const Eigen::VectorXd& RewardModel::map_rewards() const {
  if (!fitted_) fail(ErrorCode::State, "reward model has not been fitted");
  return map_rewards_;
}

RewardPrediction RewardModel::predict(const Eigen::VectorXd& raw_point) const {
  if (!fitted_) fail(ErrorCode::State, "reward model has not been fitted");
  const Eigen::VectorXd y = standardizer_.apply(raw_point);
  const double prior = kernel(y, y, hyper_);
  if (points_.empty()) return {0.0, prior};
  const Eigen::VectorXd ks = cross_kernel(points_, y, hyper_);
  const double mean = ks.dot(alpha_);
  double var = prior - ks.dot(gram_.solve(ks));
  if (var < 0.0) var = 0.0;
  return {mean, var};
}

std::vector<RewardPrediction> RewardModel::predict(std::span<const Eigen::VectorXd> raw_points) const {
  std::vector<RewardPrediction> out(raw_points.size());
  const std::size_t n = raw_points.size();
  const std::size_t workers = std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()),
                                                    std::max<std::size_t>(1, n / 64));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = predict(raw_points[i]);
    return out;
  }
  // Each slot is written by exactly one worker; the model is read-only.
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) out[i] = predict(raw_points[i]);
    });
  }
  for (auto& t : pool) t.join();
  return out;
}

std::string RewardModel::snapshot() const {
  if (!fitted_) fail(ErrorCode::State, "cannot snapshot an unfitted reward model");
  std::ostringstream out;
  out << std::setprecision(17);
  out << kSnapshotMagic << ' ' << kSnapshotVersion << '\n';
  write_vector(out, "center", standardizer_.center);
  write_vector(out, "scale", standardizer_.scale);
  out << "signal_var " << hyper_.signal_var << '\n';
  write_vector(out, "lengthscales", hyper_.lengthscales);
  out << "sigma_p " << noise_.sigma_p << '\n';
  out << "sigma_r " << noise_.sigma_r << '\n';
  out << "points " << points_.size() << '\n';
  for (const auto& p : points_) write_vector(out, "y", p);
  write_vector(out, "map_rewards", map_rewards_);
  return out.str();
}

RewardModel RewardModel::from_snapshot(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kSnapshotMagic) {
    fail(ErrorCode::InvalidArgument, "not a reward model snapshot");
  }
  if (version != kSnapshotVersion) {
    fail(ErrorCode::InvalidArgument, "unsupported reward model snapshot version");
  }
  Standardizer st;
  st.center = read_vector(in, "center");
  st.scale = read_vector(in, "scale");
  KernelHyper h;
  h.signal_var = read_scalar(in, "signal_var");
  h.lengthscales = read_vector(in, "lengthscales");
  NoiseTerms nz;
  nz.sigma_p = read_scalar(in, "sigma_p");
  nz.sigma_r = read_scalar(in, "sigma_r");
  const auto count = static_cast<std::size_t>(read_scalar(in, "points"));
  RewardModel model(st, h, nz);
  for (std::size_t i = 0; i < count; ++i) model.points_.push_back(read_vector(in, "y"));
  model.map_rewards_ = read_vector(in, "map_rewards");
  if (static_cast<std::size_t>(model.map_rewards_.size()) != count) {
    fail(ErrorCode::InvalidArgument, "reward model snapshot: reward count mismatch");
  }
  model.refactor();
  model.last_fit_.rewards = model.map_rewards_;
  model.last_fit_.alpha = model.alpha_;
  model.fitted_ = true;
  return model;
}

}  // namespace handover
