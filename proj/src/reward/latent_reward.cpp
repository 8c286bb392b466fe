#include "reward/latent_reward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <tuple>

#include <Eigen/LU>

#include "reward/probit.hpp"

namespace handover {

void NoiseTerms::validate() const {
  if (!std::isfinite(sigma_p) || !(sigma_p > 0.0) || !std::isfinite(sigma_r) || !(sigma_r > 0.0)) {
    fail(ErrorCode::InvalidArgument, "noise terms must be positive and finite");
  }
}

void FeedbackDataset::validate() const {
  const auto dim = points.empty() ? Eigen::Index{0} : points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim || !p.allFinite()) {
      fail(ErrorCode::InvalidArgument, "dataset points must share a dimension and be finite");
    }
  }
  for (const auto& r : ratings) {
    if (r.index >= points.size()) fail(ErrorCode::InvalidArgument, "rating references unknown sample");
    if (!std::isfinite(r.value)) fail(ErrorCode::InvalidArgument, "rating must be finite");
  }
  for (const auto& c : comparisons) {
    if (c.winner >= points.size() || c.loser >= points.size()) {
      fail(ErrorCode::InvalidArgument, "preference references unknown sample");
    }
    if (c.winner == c.loser) fail(ErrorCode::InvalidArgument, "preference compares a sample to itself");
  }
}

GramFactor::GramFactor(const Eigen::MatrixXd& gram, double signal_var) {
  const auto n = gram.rows();
  // A well-conditioned Gram is factored as is; jitter only enters when some
  // Cholesky pivot falls under 1e-6 of the signal variance.
  llt_.compute(gram);
  if (llt_.info() == Eigen::Success && llt_.matrixLLT().diagonal().allFinite() &&
      (n == 0 || llt_.matrixLLT().diagonal().array().square().minCoeff() >= 1e-6 * signal_var)) {
    jittered_ = gram;
    jitter_ = 0.0;
    return;
  }
  const double base = 1e-8 * signal_var;
  const double cap = 1e-4 * signal_var * (1.0 + 1e-9);
  for (double jitter = base; jitter <= cap; jitter *= 10.0) {
    jittered_ = gram;
    jittered_.diagonal().array() += jitter;
    llt_.compute(jittered_);
    if (llt_.info() == Eigen::Success && llt_.matrixLLT().diagonal().allFinite() &&
        (n == 0 || llt_.matrixLLT().diagonal().minCoeff() > 0.0)) {
      jitter_ = jitter;
      return;
    }
  }
  fail(ErrorCode::Solver, "gram matrix factorization failed after jitter escalation");
}

double GramFactor::log_det() const {
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

LikelihoodTerms likelihood_terms(const Eigen::VectorXd& r, const FeedbackDataset& data,
                                 const NoiseTerms& noise, bool with_hessian) {
  const auto n = r.size();
  LikelihoodTerms out;
  out.gradient = Eigen::VectorXd::Zero(n);
  if (with_hessian) out.hessian = Eigen::MatrixXd::Zero(n, n);

  const double pref_scale = 1.0 / (std::numbers::sqrt2 * noise.sigma_p);
  for (const auto& c : data.comparisons) {
    const auto w = static_cast<Eigen::Index>(c.winner);
    const auto l = static_cast<Eigen::Index>(c.loser);
    const double z = (r(w) - r(l)) * pref_scale;
    const double lambda = inverse_mills(z);
    out.value -= log_normal_cdf(z);
    // d/dz of -log Phi(z) is -lambda
    out.gradient(w) -= lambda * pref_scale;
    out.gradient(l) += lambda * pref_scale;
    if (with_hessian) {
      const double curv = lambda * (z + lambda) * pref_scale * pref_scale;
      out.hessian(w, w) += curv;
      out.hessian(l, l) += curv;
      out.hessian(w, l) -= curv;
      out.hessian(l, w) -= curv;
    }
  }

  const double inv_var = 1.0 / (noise.sigma_r * noise.sigma_r);
  for (const auto& rating : data.ratings) {
    const auto j = static_cast<Eigen::Index>(rating.index);
    const double resid = rating.value - r(j);
    out.value += 0.5 * inv_var * resid * resid;
    out.gradient(j) -= inv_var * resid;
    if (with_hessian) out.hessian(j, j) += inv_var;
  }
  return out;
}

double objective_j(const Eigen::VectorXd& r, const FeedbackDataset& data, const GramFactor& gram,
                   const NoiseTerms& noise) {
  if (r.size() != gram.size()) fail(ErrorCode::InvalidArgument, "latent reward length mismatch");
  const auto lik = likelihood_terms(r, data, noise, false);
  return lik.value + r.dot(gram.solve(r));
}

Eigen::VectorXd objective_gradient(const Eigen::VectorXd& r, const FeedbackDataset& data,
                                   const GramFactor& gram, const NoiseTerms& noise) {
  const auto lik = likelihood_terms(r, data, noise, false);
  return lik.gradient + 2.0 * gram.solve(r);
}

Eigen::MatrixXd objective_hessian(const Eigen::VectorXd& r, const FeedbackDataset& data,
                                  const GramFactor& gram, const NoiseTerms& noise) {
  const auto n = r.size();
  const auto lik = likelihood_terms(r, data, noise, true);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd inv = gram.solve(eye);
  Eigen::MatrixXd h = lik.hessian + inv + inv.transpose();
  return 0.5 * (h + h.transpose());
}

namespace {

// J evaluated through alpha = K^-1 R, so the prior term is alpha^T K alpha
// without an explicit inverse.
double objective_alpha(const Eigen::VectorXd& alpha, const Eigen::VectorXd& r,
                       const FeedbackDataset& data, const NoiseTerms& noise) {
  return likelihood_terms(r, data, noise, false).value + alpha.dot(r);
}

}  // namespace

MapResult map_estimate(const FeedbackDataset& data, const GramFactor& gram,
                       const NoiseTerms& noise, const std::optional<Eigen::VectorXd>& init,
                       const MapOptions& options) {
  data.validate();
  noise.validate();
  const auto n = static_cast<Eigen::Index>(data.size());
  if (gram.size() != n) fail(ErrorCode::InvalidArgument, "gram factor does not match dataset");

  MapResult result;
  if (n == 0) {
    result.rewards = Eigen::VectorXd::Zero(0);
    result.alpha = Eigen::VectorXd::Zero(0);
    return result;
  }
  if (data.feedback_count() == 0) {
    fail(ErrorCode::InvalidArgument, "MAP estimation needs at least one feedback event");
  }

  const Eigen::MatrixXd& k = gram.matrix();
  Eigen::VectorXd r = init ? *init : Eigen::VectorXd::Zero(n);
  if (r.size() != n || !r.allFinite()) fail(ErrorCode::InvalidArgument, "invalid MAP initialization");
  Eigen::VectorXd alpha = gram.solve(r);
  r = k * alpha;
  double j = objective_alpha(alpha, r, data, noise);

  for (int it = 0; it <= options.max_iterations; ++it) {
    const auto lik = likelihood_terms(r, data, noise, true);
    const Eigen::VectorXd g = lik.gradient + 2.0 * alpha;
    const double gn = g.lpNorm<Eigen::Infinity>();
    if (gn <= options.gradient_tolerance) {
      result.rewards = r;
      result.alpha = alpha;
      result.objective = j;
      result.gradient_norm = gn;
      result.iterations = it;
      return result;
    }
    if (it == options.max_iterations) break;

    // Newton system in alpha: (W K + 2 I) d_alpha = -g.
    Eigen::MatrixXd a = lik.hessian * k;
    a.diagonal().array() += 2.0;
    const Eigen::VectorXd step = -a.partialPivLu().solve(g);
    if (!step.allFinite()) break;

    double t = 1.0;
    Eigen::VectorXd alpha_next;
    Eigen::VectorXd r_next;
    double j_next = j;
    const double slack = 1e-12 * (1.0 + std::abs(j));
    for (int halvings = 0; halvings < 60; ++halvings, t *= 0.5) {
      alpha_next = alpha + t * step;
      r_next = k * alpha_next;
      j_next = objective_alpha(alpha_next, r_next, data, noise);
      if (std::isfinite(j_next) && j_next <= j + slack) break;
    }
    if (!std::isfinite(j_next)) break;
    alpha = std::move(alpha_next);
    r = std::move(r_next);
    j = j_next;
  }
  throw MapSolverError("Newton iteration did not converge within the iteration cap", r);
}

MapResult map_estimate(const FeedbackDataset& data, const KernelHyper& hyper,
                       const NoiseTerms& noise, const std::optional<Eigen::VectorXd>& init) {
  const GramFactor gram(gram_matrix(data.points, hyper), hyper.signal_var);
  return map_estimate(data, gram, noise, init);
}

double laplace_evidence(const FeedbackDataset& data, const KernelHyper& hyper,
                        const NoiseTerms& noise) {
  data.validate();
  noise.validate();
  if (data.size() == 0 || data.feedback_count() == 0) return 0.0;

  const GramFactor gram(gram_matrix(data.points, hyper), hyper.signal_var);
  const auto map = map_estimate(data, gram, noise);
  const auto lik = likelihood_terms(map.rewards, data, noise, true);

  // With the unhalved quadratic prior the effective prior covariance is K/2,
  // hence the K W / 2 in the curvature correction.
  Eigen::MatrixXd b = 0.5 * gram.matrix() * lik.hessian;
  b.diagonal().array() += 1.0;
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(b);
  const double log_det = lu.matrixLU().diagonal().array().abs().log().sum();

  const auto m = static_cast<double>(data.ratings.size());
  const double rating_norm = 0.5 * m * std::log(2.0 * std::numbers::pi * noise.sigma_r * noise.sigma_r);
  const double value = -lik.value - rating_norm - map.alpha.dot(map.rewards) - 0.5 * log_det;
  if (!std::isfinite(value)) fail(ErrorCode::Solver, "Laplace evidence is not finite");
  return value;
}

namespace {

double mean_log_lengthscale(const KernelHyper& h) {
  return h.lengthscales.array().log().mean();
}

// Lexicographic preference among near-tied candidates: larger lengthscales
// first, then larger signal variance, then larger noise.
auto tie_key(const HyperCandidate& c) {
  return std::make_tuple(mean_log_lengthscale(c.kernel), c.kernel.signal_var, c.noise.sigma_p,
                         c.noise.sigma_r);
}

}  // namespace

HyperSelection select_hyperparameters(const FeedbackDataset& data,
                                      std::span<const HyperCandidate> candidates,
                                      const HyperCandidate& defaults) {
  if (data.size() == 0) fail(ErrorCode::InvalidArgument, "hyperparameter selection needs data");

  std::vector<std::pair<double, const HyperCandidate*>> scored;
  scored.reserve(candidates.size());
  for (const auto& c : candidates) {
    try {
      scored.emplace_back(laplace_evidence(data, c.kernel, c.noise), &c);
    } catch (const Error&) {
      // candidate skipped
    }
  }
  if (scored.empty()) return HyperSelection{defaults, 0.0, true};

  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [ev, c] : scored) best = std::max(best, ev);
  const double tol = 1e-9 * std::max(1.0, std::abs(best));

  const HyperCandidate* chosen = nullptr;
  double chosen_ev = best;
  for (const auto& [ev, c] : scored) {
    if (ev < best - tol) continue;
    if (chosen == nullptr || tie_key(*c) > tie_key(*chosen)) {
      chosen = c;
      chosen_ev = ev;
    }
  }
  return HyperSelection{*chosen, chosen_ev, false};
}

std::vector<HyperCandidate> default_hyper_grid(const HyperCandidate& defaults) {
  std::vector<HyperCandidate> grid;
  for (double ls : {0.5, 1.0, 2.0}) {
    for (double sv : {0.25, 1.0, 4.0}) {
      for (double nz : {0.5, 1.0, 2.0}) {
        HyperCandidate c = defaults;
        c.kernel.lengthscales = defaults.kernel.lengthscales * ls;
        c.kernel.signal_var = defaults.kernel.signal_var * sv;
        c.noise.sigma_p = defaults.noise.sigma_p * nz;
        c.noise.sigma_r = defaults.noise.sigma_r * nz;
        grid.push_back(std::move(c));
      }
    }
  }
  return grid;
}

}  // namespace handover
