#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "core/random.hpp"
#include "core/types.hpp"

namespace handover {

// pi(a | s) = N(a | mean_offset + gain * s, covariance)
class GaussianContextualPolicy {
 public:
  GaussianContextualPolicy(Eigen::VectorXd mean_offset, Eigen::MatrixXd gain,
                           Eigen::MatrixXd covariance, double covariance_floor);

  // Initial policy: gain 0, diagonal covariance. The covariance floor is
  // 1e-6 of the smallest initial variance.
  static GaussianContextualPolicy initial(const Eigen::VectorXd& mean,
                                          const Eigen::VectorXd& variances,
                                          Eigen::Index context_dim = kContextDim);

  const Eigen::VectorXd& mean_offset() const noexcept { return mean_offset_; }
  const Eigen::MatrixXd& gain() const noexcept { return gain_; }
  const Eigen::MatrixXd& covariance() const noexcept { return covariance_; }
  double covariance_floor() const noexcept { return covariance_floor_; }
  Eigen::Index param_dim() const noexcept { return mean_offset_.size(); }
  Eigen::Index context_dim() const noexcept { return gain_.cols(); }

  Eigen::VectorXd mean_at(const Eigen::VectorXd& context) const;
  Eigen::VectorXd std_devs() const;

  // Unclamped draw from N(mean_at(s), covariance).
  Eigen::VectorXd sample_raw(const Eigen::VectorXd& context, RandomSource& rng) const;

  // Text snapshot with exact decimal round-trip.
  std::string snapshot() const;
  static GaussianContextualPolicy from_snapshot(std::string_view text);
  // FNV-1a of snapshot(), for lineage checks.
  std::uint64_t fingerprint() const;

 private:
  void validate();

  Eigen::VectorXd mean_offset_;
  Eigen::MatrixXd gain_;
  Eigen::MatrixXd covariance_;
  Eigen::MatrixXd chol_;
  double covariance_floor_;
};

Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& m, double floor);

ControllerParams sample_action(const GaussianContextualPolicy& policy, const Context& s,
                               RandomSource& rng, const ParamBounds& bounds);

}  // namespace handover
