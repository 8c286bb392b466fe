#include "policy/creps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "core/error.hpp"

namespace handover {

Eigen::VectorXd context_features(const Eigen::VectorXd& context) {
  Eigen::VectorXd phi(context.size() + 1);
  phi(0) = 1.0;
  phi.tail(context.size()) = context;
  return phi;
}

namespace {

void check_samples(std::span<const PolicySample> samples) {
  if (samples.empty()) fail(ErrorCode::InvalidArgument, "C-REPS needs at least one sample");
  const auto d = samples.front().context.size();
  const auto p = samples.front().params.size();
  for (const auto& s : samples) {
    if (s.context.size() != d || s.params.size() != p) {
      fail(ErrorCode::InvalidArgument, "samples have inconsistent dimensions");
    }
    if (!std::isfinite(s.reward) || !s.context.allFinite() || !s.params.allFinite()) {
      fail(ErrorCode::InvalidArgument, "samples must be finite");
    }
  }
}

struct Features {
  Eigen::MatrixXd phi;  // n x (1 + d)
  Eigen::VectorXd mean;
  Eigen::VectorXd rewards;
};

Features build_features(std::span<const PolicySample> samples) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  const auto k = samples.front().context.size() + 1;
  Features f;
  f.phi.resize(n, k);
  f.rewards.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    f.phi.row(i) = context_features(samples[static_cast<std::size_t>(i)].context).transpose();
    f.rewards(i) = samples[static_cast<std::size_t>(i)].reward;
  }
  f.mean = f.phi.colwise().mean().transpose();
  return f;
}

DualValue evaluate_dual(double eta, const Eigen::VectorXd& theta, const Features& f, double epsilon) {
  const auto n = static_cast<double>(f.rewards.size());
  const Eigen::VectorXd adv = f.rewards - f.phi * theta;
  const double mx = adv.maxCoeff();
  const Eigen::ArrayXd e = ((adv.array() - mx) / eta).exp();
  const double sum = e.sum();
  const double lse = mx / eta + std::log(sum) - std::log(n);
  const Eigen::VectorXd w = (e / sum).matrix();

  DualValue out;
  out.value = eta * epsilon + theta.dot(f.mean) + eta * lse;
  out.d_theta = f.mean - f.phi.transpose() * w;
  out.d_eta = epsilon + lse - w.dot(adv) / eta;
  return out;
}

Eigen::VectorXd normalized_weights(const Features& f, double eta, const Eigen::VectorXd& theta) {
  const Eigen::VectorXd adv = (f.rewards - f.phi * theta) / eta;
  const double mx = adv.maxCoeff();
  Eigen::VectorXd w = (adv.array() - mx).exp().matrix();
  return w / w.sum();
}

double kl_of(const Eigen::VectorXd& w) {
  const auto n = static_cast<double>(w.size());
  double kl = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w(i) > 0.0) kl += w(i) * std::log(n * w(i));
  }
  return kl;
}

// BFGS over x = (log eta, theta) on the dual; returns the minimizer.
struct BfgsResult {
  Eigen::VectorXd x;
  int iterations = 0;
  bool converged = false;
};

BfgsResult minimize_dual(const Features& f, double epsilon, Eigen::VectorXd x, double log_eta_floor) {
  const auto dim = x.size();
  auto eval = [&](const Eigen::VectorXd& z, Eigen::VectorXd& grad) {
    const double eta = std::exp(z(0));
    const auto dv = evaluate_dual(eta, z.tail(dim - 1), f, epsilon);
    grad.resize(dim);
    grad(0) = dv.d_eta * eta;
    grad.tail(dim - 1) = dv.d_theta;
    return dv.value;
  };

  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(dim, dim);
  Eigen::VectorXd g;
  double fx = eval(x, g);
  BfgsResult res;
  for (int it = 0; it < 2000; ++it) {
    res.iterations = it;
    // Projected gradient: at the eta floor an outward-pointing component is inactive.
    Eigen::VectorXd pg = g;
    if (x(0) <= log_eta_floor && pg(0) > 0.0) pg(0) = 0.0;
    if (pg.lpNorm<Eigen::Infinity>() < 1e-10) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd dir = -hinv * g;
    if (dir.dot(g) >= 0.0) {
      hinv.setIdentity();
      dir = -g;
    }
    double t = 1.0;
    Eigen::VectorXd xn;
    Eigen::VectorXd gn;
    double fn = fx;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      xn = x + t * dir;
      xn(0) = std::clamp(xn(0), log_eta_floor, 700.0);
      fn = eval(xn, gn);
      if (std::isfinite(fn) && fn <= fx + 1e-4 * g.dot(xn - x)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // No descent along this direction; converged to round-off.
      res.converged = pg.lpNorm<Eigen::Infinity>() < 1e-6;
      break;
    }
    const Eigen::VectorXd s = xn - x;
    const Eigen::VectorXd y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-14 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(dim, dim);
      hinv = (eye - rho * s * y.transpose()) * hinv * (eye - rho * y * s.transpose()) +
             rho * s * s.transpose();
    }
    const double fprev = fx;
    x = xn;
    g = gn;
    fx = fn;
    if (std::abs(fprev - fx) <= 1e-16 * std::max(1.0, std::abs(fx)) && s.lpNorm<Eigen::Infinity>() < 1e-14) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  return res;
}

}  // namespace

DualValue dual_objective(double eta, const Eigen::VectorXd& theta,
                         std::span<const PolicySample> samples, double epsilon) {
  if (!(eta > 0.0) || !std::isfinite(eta)) fail(ErrorCode::InvalidArgument, "dual temperature must be positive");
  check_samples(samples);
  const Features f = build_features(samples);
  if (theta.size() != f.phi.cols()) fail(ErrorCode::InvalidArgument, "baseline dimension mismatch");
  return evaluate_dual(eta, theta, f, epsilon);
}

DualSolution solve_dual(std::span<const PolicySample> samples, double epsilon) {
  check_samples(samples);
  if (samples.size() < 2) fail(ErrorCode::InvalidArgument, "dual solve needs at least two samples");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail(ErrorCode::InvalidArgument, "epsilon must be positive");

  Features f = build_features(samples);
  const auto k = f.phi.cols();
  const double shift = f.rewards.mean();
  const double scale = std::sqrt((f.rewards.array() - shift).square().mean());

  DualSolution sol;
  sol.theta = Eigen::VectorXd::Zero(k);
  if (!(scale > 1e-300)) {
    // Constant rewards: every eta is optimal and the weights are uniform.
    sol.eta = 1.0;
    sol.theta(0) = shift;
    return sol;
  }

  // Solve on standardized rewards; weights are invariant to this affine map.
  f.rewards = (f.rewards.array() - shift) / scale;
  const double log_eta_floor = std::log(kEtaFloor / scale);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(k + 1);
  x(0) = 0.0;
  const auto res = minimize_dual(f, epsilon, x, log_eta_floor);

  double eta_n = std::exp(res.x(0));
  Eigen::VectorXd theta_n = res.x.tail(k);
  sol.iterations = res.iterations;

  const bool finite = std::isfinite(eta_n) && theta_n.allFinite();
  if (!finite) {
    eta_n = 1.0;
    theta_n.setZero();
  }
  double kl = kl_of(normalized_weights(f, eta_n, theta_n));
  if (!finite || !res.converged || kl > epsilon + 0.05) {
    sol.fallback = true;
    while (kl > epsilon && eta_n < 1e12) {
      eta_n *= 2.0;
      kl = kl_of(normalized_weights(f, eta_n, theta_n));
    }
  }
  sol.eta = std::max(eta_n * scale, kEtaFloor);
  sol.theta = theta_n * scale;
  sol.theta(0) += shift;
  return sol;
}

std::vector<WeightedSample> compute_weights(std::span<const PolicySample> samples,
                                            const DualSolution& dual) {
  check_samples(samples);
  if (!(dual.eta > 0.0)) fail(ErrorCode::InvalidArgument, "dual temperature must be positive");
  const auto n = samples.size();
  std::vector<double> expo(n);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = (samples[i].reward - dual.theta.dot(context_features(samples[i].context))) / dual.eta;
    expo[i] = v;
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (auto& v : expo) {
    v = std::exp(v - mx);
    sum += v;
  }
  std::vector<WeightedSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({samples[i].context, samples[i].params, samples[i].reward, expo[i] / sum});
  }
  return out;
}

double sample_kl(std::span<const WeightedSample> weighted) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(weighted.size()));
  double sum = 0.0;
  for (std::size_t i = 0; i < weighted.size(); ++i) sum += weighted[i].weight;
  for (std::size_t i = 0; i < weighted.size(); ++i) {
    w(static_cast<Eigen::Index>(i)) = weighted[i].weight / sum;
  }
  return kl_of(w);
}

MlUpdate weighted_ml_update(const GaussianContextualPolicy& policy,
                            std::span<const WeightedSample> weighted) {
  if (weighted.empty()) fail(ErrorCode::InvalidArgument, "weighted ML update needs samples");
  const auto n = static_cast<Eigen::Index>(weighted.size());
  const auto p = policy.param_dim();
  const auto d = policy.context_dim();

  Eigen::VectorXd w(n);
  Eigen::MatrixXd x(n, d + 1);
  Eigen::MatrixXd y(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = weighted[static_cast<std::size_t>(i)];
    if (s.context.size() != d || s.params.size() != p) {
      fail(ErrorCode::InvalidArgument, "weighted sample dimensions do not match the policy");
    }
    if (!std::isfinite(s.weight) || s.weight < 0.0) {
      fail(ErrorCode::InvalidArgument, "sample weights must be finite and non-negative");
    }
    w(i) = s.weight;
    x.row(i) = context_features(s.context).transpose();
    y.row(i) = s.params.transpose();
  }
  const double total = w.sum();
  if (!(total > 0.0)) fail(ErrorCode::InvalidArgument, "sample weights sum to zero");
  w /= total;

  const auto nonzero = (w.array() > 0.0).count();
  // Weighted context covariance decides whether the gain is identifiable.
  const Eigen::VectorXd s_mean = x.rightCols(d).transpose() * w;
  Eigen::MatrixXd s_cov = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd c = x.row(i).tail(d).transpose() - s_mean;
    s_cov += w(i) * c * c.transpose();
  }
  double s_min_eig = 0.0;
  if (d > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s_cov, Eigen::EigenvaluesOnly);
    s_min_eig = eig.eigenvalues().minCoeff();
  }
  const bool rank_deficient =
      d > 0 && (nonzero < d + 2 || s_min_eig <= 1e-12 * std::max(1.0, s_mean.squaredNorm()));

  Eigen::VectorXd mean(p);
  Eigen::MatrixXd gain(p, d);
  bool kept = false;
  if (rank_deficient) {
    gain = policy.gain();
    const Eigen::MatrixXd resid = y - x.rightCols(d) * gain.transpose();
    mean = resid.transpose() * w;
    kept = true;
  } else {
    const Eigen::MatrixXd xtw = x.transpose() * w.asDiagonal();
    Eigen::MatrixXd normal = xtw * x;
    normal.diagonal().array() += kNormalEquationRidge;
    const Eigen::MatrixXd coef = normal.ldlt().solve(xtw * y);  // (1+d) x p
    mean = coef.row(0).transpose();
    gain = coef.bottomRows(d).transpose();
  }

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w(i) == 0.0) continue;
    const Eigen::VectorXd r = y.row(i).transpose() - mean - gain * x.row(i).tail(d).transpose();
    cov += w(i) * r * r.transpose();
  }
  cov = floor_eigenvalues(cov, policy.covariance_floor());
  return MlUpdate{GaussianContextualPolicy(mean, gain, cov, policy.covariance_floor()), kept};
}

CrepsStep creps_update(const GaussianContextualPolicy& policy, std::span<const PolicySample> samples,
                       double epsilon) {
  DualSolution dual = solve_dual(samples, epsilon);
  const auto weighted = compute_weights(samples, dual);
  const double kl = sample_kl(weighted);
  auto ml = weighted_ml_update(policy, weighted);
  return CrepsStep{std::move(ml.policy), std::move(dual), kl, ml.gain_kept};
}

}  // namespace handover
