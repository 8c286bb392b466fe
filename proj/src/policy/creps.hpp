#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "policy/gaussian_policy.hpp"

namespace handover {

inline constexpr double kEtaFloor = 1e-6;
inline constexpr double kDefaultEpsilon = 0.75;

struct PolicySample {
  Eigen::VectorXd context;
  Eigen::VectorXd params;
  double reward = 0.0;
};

struct WeightedSample {
  Eigen::VectorXd context;
  Eigen::VectorXd params;
  double reward = 0.0;
  double weight = 0.0;
};

// phi(s) = [1, s]
Eigen::VectorXd context_features(const Eigen::VectorXd& context);

struct DualValue {
  double value = 0.0;
  double d_eta = 0.0;
  Eigen::VectorXd d_theta;
};

// g(eta, theta) = eta*eps + theta^T phi_bar + eta * log mean_i exp((R_i - theta^T phi_i) / eta)
DualValue dual_objective(double eta, const Eigen::VectorXd& theta,
                         std::span<const PolicySample> samples, double epsilon);

struct DualSolution {
  double eta = 1.0;
  Eigen::VectorXd theta;  // baseline V(s) = theta^T phi(s)
  int iterations = 0;
  bool fallback = false;  // optimizer failed; eta doubled until the KL bound held
};

DualSolution solve_dual(std::span<const PolicySample> samples, double epsilon);

std::vector<WeightedSample> compute_weights(std::span<const PolicySample> samples,
                                            const DualSolution& dual);

// sum_i w_i log(n w_i) for normalized weights: KL of the reweighting against uniform.
double sample_kl(std::span<const WeightedSample> weighted);

struct MlUpdate {
  GaussianContextualPolicy policy;
  bool gain_kept = false;  // design was rank-deficient; previous gain retained
};

inline constexpr double kNormalEquationRidge = 1e-8;

MlUpdate weighted_ml_update(const GaussianContextualPolicy& policy,
                            std::span<const WeightedSample> weighted);

struct CrepsStep {
  GaussianContextualPolicy policy;
  DualSolution dual;
  double kl = 0.0;
  bool gain_kept = false;
};

CrepsStep creps_update(const GaussianContextualPolicy& policy, std::span<const PolicySample> samples,
                       double epsilon);

}  // namespace handover
