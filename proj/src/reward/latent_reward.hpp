#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "core/error.hpp"
#include "reward/kernel.hpp"

namespace handover {

struct NoiseTerms {
  double sigma_p = 0.8;  // preference noise
  double sigma_r = 0.8;  // absolute rating noise std

  void validate() const;
};

// Feedback over points in model (standardized) coordinates. Indices are
// 0-based positions into `points`.
struct FeedbackDataset {
  struct Rating {
    std::size_t index;
    double value;
  };
  struct Comparison {
    std::size_t winner;
    std::size_t loser;
  };

  std::vector<Eigen::VectorXd> points;
  std::vector<Rating> ratings;
  std::vector<Comparison> comparisons;

  std::size_t size() const noexcept { return points.size(); }
  std::size_t feedback_count() const noexcept { return ratings.size() + comparisons.size(); }
  void validate() const;
};

// Cholesky factor of K + jitter*I. Jitter is zero for a well-conditioned K,
// otherwise it starts at 1e-8*signal_var and escalates x10 up to 1e-4*signal_var.
class GramFactor {
 public:
  GramFactor() = default;
  GramFactor(const Eigen::MatrixXd& gram, double signal_var);

  const Eigen::MatrixXd& matrix() const noexcept { return jittered_; }
  double jitter() const noexcept { return jitter_; }
  Eigen::Index size() const noexcept { return jittered_.rows(); }
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return llt_.solve(b); }
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const { return llt_.solve(b); }
  double log_det() const;

 private:
  Eigen::MatrixXd jittered_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double jitter_ = 0.0;
};

// Likelihood part of J: value, gradient and Hessian w.r.t. the latent rewards.
struct LikelihoodTerms {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

LikelihoodTerms likelihood_terms(const Eigen::VectorXd& r, const FeedbackDataset& data,
                                 const NoiseTerms& noise, bool with_hessian = true);

// J(R) = -sum log Phi(z_i) + sigma_r^-2/2 sum (R~_j - R_j)^2 + R^T K^-1 R.
// The prior term carries no 1/2.
double objective_j(const Eigen::VectorXd& r, const FeedbackDataset& data, const GramFactor& gram,
                   const NoiseTerms& noise);

Eigen::VectorXd objective_gradient(const Eigen::VectorXd& r, const FeedbackDataset& data,
                                   const GramFactor& gram, const NoiseTerms& noise);

Eigen::MatrixXd objective_hessian(const Eigen::VectorXd& r, const FeedbackDataset& data,
                                  const GramFactor& gram, const NoiseTerms& noise);

struct MapResult {
  Eigen::VectorXd rewards;
  Eigen::VectorXd alpha;  // (K + jitter I)^-1 rewards
  double objective = 0.0;
  double gradient_norm = 0.0;  // infinity norm
  int iterations = 0;
};

class MapSolverError : public Error {
 public:
  MapSolverError(const std::string& message, Eigen::VectorXd last_iterate)
      : Error(ErrorCode::Solver, message), last_iterate_(std::move(last_iterate)) {}

  const Eigen::VectorXd& last_iterate() const noexcept { return last_iterate_; }

 private:
  Eigen::VectorXd last_iterate_;
};

struct MapOptions {
  double gradient_tolerance = 1e-8;
  int max_iterations = 200;
};

// Damped Newton with step halving.
MapResult map_estimate(const FeedbackDataset& data, const GramFactor& gram,
                       const NoiseTerms& noise, const std::optional<Eigen::VectorXd>& init = {},
                       const MapOptions& options = {});

MapResult map_estimate(const FeedbackDataset& data, const KernelHyper& hyper,
                       const NoiseTerms& noise, const std::optional<Eigen::VectorXd>& init = {});

// Laplace approximation of log p(D | theta, sigma_p, sigma_r) around the MAP.
double laplace_evidence(const FeedbackDataset& data, const KernelHyper& hyper,
                        const NoiseTerms& noise);

struct HyperCandidate {
  KernelHyper kernel;
  NoiseTerms noise;
};

struct HyperSelection {
  HyperCandidate chosen;
  double evidence = 0.0;
  bool fallback = false;  // every candidate failed; defaults returned
};

HyperSelection select_hyperparameters(const FeedbackDataset& data,
                                      std::span<const HyperCandidate> candidates,
                                      const HyperCandidate& defaults);

// 3-point log-spaced grid around the defaults: lengthscale x{0.5,1,2},
// signal variance x{0.25,1,4}, both noise terms jointly x{0.5,1,2}.
std::vector<HyperCandidate> default_hyper_grid(const HyperCandidate& defaults);

}  // namespace handover
