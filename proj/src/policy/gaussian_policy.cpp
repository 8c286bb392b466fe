#include "policy/gaussian_policy.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "core/error.hpp"

namespace handover {

namespace {

constexpr std::string_view kMagic = "handover-policy";
constexpr int kVersion = 1;

}  // namespace

Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& m, double floor) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) fail(ErrorCode::Solver, "covariance eigendecomposition failed");
  // Reconstruction error scales with the largest eigenvalue; lift the floor
  // by that amount so the result still clears `floor` after round-off.
  const double lifted = floor + 1e-10 * std::max(0.0, eig.eigenvalues().maxCoeff());
  Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(lifted);
  Eigen::MatrixXd out = eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

GaussianContextualPolicy::GaussianContextualPolicy(Eigen::VectorXd mean_offset,
                                                   Eigen::MatrixXd gain,
                                                   Eigen::MatrixXd covariance,
                                                   double covariance_floor)
    : mean_offset_(std::move(mean_offset)),
      gain_(std::move(gain)),
      covariance_(std::move(covariance)),
      covariance_floor_(covariance_floor) {
  validate();
}

void GaussianContextualPolicy::validate() {
  const auto p = mean_offset_.size();
  if (p == 0 || gain_.rows() != p || covariance_.rows() != p || covariance_.cols() != p) {
    fail(ErrorCode::InvalidArgument, "policy shapes are inconsistent");
  }
  if (!mean_offset_.allFinite() || !gain_.allFinite() || !covariance_.allFinite()) {
    fail(ErrorCode::InvalidArgument, "policy entries must be finite");
  }
  if (!std::isfinite(covariance_floor_) || !(covariance_floor_ > 0.0)) {
    fail(ErrorCode::InvalidArgument, "covariance floor must be positive");
  }
  if ((covariance_ - covariance_.transpose()).lpNorm<Eigen::Infinity>() >
      1e-12 * std::max(1.0, covariance_.lpNorm<Eigen::Infinity>())) {
    fail(ErrorCode::InvalidArgument, "policy covariance must be symmetric");
  }
  covariance_ = 0.5 * (covariance_ + covariance_.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance_, Eigen::EigenvaluesOnly);
  const double slack = 1e-12 * std::max(0.0, eig.eigenvalues().maxCoeff());
  if (eig.eigenvalues().minCoeff() < covariance_floor_ * (1.0 - 1e-6) - slack) {
    fail(ErrorCode::InvalidArgument, "policy covariance eigenvalue below floor");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(covariance_);
  if (llt.info() != Eigen::Success) fail(ErrorCode::InvalidArgument, "policy covariance not PD");
  chol_ = llt.matrixL();
}

GaussianContextualPolicy GaussianContextualPolicy::initial(const Eigen::VectorXd& mean,
                                                           const Eigen::VectorXd& variances,
                                                           Eigen::Index context_dim) {
  if (variances.size() != mean.size() || (variances.array() <= 0.0).any()) {
    fail(ErrorCode::InvalidArgument, "initial variances must be positive, one per parameter");
  }
  return GaussianContextualPolicy(mean, Eigen::MatrixXd::Zero(mean.size(), context_dim),
                                  variances.asDiagonal(), 1e-6 * variances.minCoeff());
}

Eigen::VectorXd GaussianContextualPolicy::mean_at(const Eigen::VectorXd& context) const {
  if (context.size() != gain_.cols()) fail(ErrorCode::InvalidArgument, "context dimension mismatch");
  return mean_offset_ + gain_ * context;
}

Eigen::VectorXd GaussianContextualPolicy::std_devs() const {
  return covariance_.diagonal().cwiseSqrt();
}

Eigen::VectorXd GaussianContextualPolicy::sample_raw(const Eigen::VectorXd& context,
                                                     RandomSource& rng) const {
  Eigen::VectorXd z(param_dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean_at(context) + chol_ * z;
}

std::string GaussianContextualPolicy::snapshot() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << kMagic << ' ' << kVersion << '\n';
  out << "param_dim " << param_dim() << '\n';
  out << "context_dim " << context_dim() << '\n';
  out << "covariance_floor " << covariance_floor_ << '\n';
  out << "mean";
  for (Eigen::Index i = 0; i < mean_offset_.size(); ++i) out << ' ' << mean_offset_(i);
  out << "\ngain";
  for (Eigen::Index i = 0; i < gain_.rows(); ++i)
    for (Eigen::Index j = 0; j < gain_.cols(); ++j) out << ' ' << gain_(i, j);
  out << "\ncovariance";
  for (Eigen::Index i = 0; i < covariance_.rows(); ++i)
    for (Eigen::Index j = 0; j < covariance_.cols(); ++j) out << ' ' << covariance_(i, j);
  out << '\n';
  return out.str();
}

GaussianContextualPolicy GaussianContextualPolicy::from_snapshot(std::string_view text) {
  std::istringstream in{std::string(text)};
  auto expect = [&](std::string_view key) {
    std::string k;
    if (!(in >> k) || k != key) {
      fail(ErrorCode::InvalidArgument, "policy snapshot: expected '" + std::string(key) + "'");
    }
  };
  auto number = [&](double& v) {
    if (!(in >> v)) fail(ErrorCode::InvalidArgument, "policy snapshot: malformed number");
  };
  expect(kMagic);
  int version = 0;
  if (!(in >> version) || version != kVersion) {
    fail(ErrorCode::InvalidArgument, "policy snapshot: unsupported version");
  }
  Eigen::Index p = 0;
  Eigen::Index d = 0;
  expect("param_dim");
  in >> p;
  expect("context_dim");
  in >> d;
  if (!in || p <= 0 || d < 0 || p > 64 || d > 64) {
    fail(ErrorCode::InvalidArgument, "policy snapshot: bad dimensions");
  }
  double floor = 0;
  expect("covariance_floor");
  number(floor);
  Eigen::VectorXd mean(p);
  Eigen::MatrixXd gain(p, d);
  Eigen::MatrixXd cov(p, p);
  expect("mean");
  for (Eigen::Index i = 0; i < p; ++i) number(mean(i));
  expect("gain");
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < d; ++j) number(gain(i, j));
  expect("covariance");
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j) number(cov(i, j));
  return GaussianContextualPolicy(mean, gain, cov, floor);
}

std::uint64_t GaussianContextualPolicy::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : snapshot()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ControllerParams sample_action(const GaussianContextualPolicy& policy, const Context& s,
                               RandomSource& rng, const ParamBounds& bounds) {
  const Eigen::VectorXd raw = policy.sample_raw(s.features(), rng);
  return clamp_params(std::span<const double>(raw.data(), static_cast<std::size_t>(raw.size())),
                      bounds);
}

}  // namespace handover
