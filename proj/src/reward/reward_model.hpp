#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "core/types.hpp"
#include "reward/kernel.hpp"
#include "reward/latent_reward.hpp"

namespace handover {

// Per-dimension z-score: (y - center) / scale.
struct Standardizer {
  Eigen::VectorXd center;
  Eigen::VectorXd scale;

  static Standardizer identity(Eigen::Index dim);
  // Centers on the bound midpoints, scales by the std of a uniform over the
  // bounds, so one lengthscale is comparable across N/m, mm and m/s.
  static Standardizer from_bounds(const ContextBounds& context, const ParamBounds& params);

  Eigen::VectorXd apply(const Eigen::VectorXd& raw) const;
  Eigen::Index dim() const noexcept { return center.size(); }
};

struct RewardPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

class RewardModel {
 public:
  RewardModel(Standardizer standardizer, KernelHyper hyper, NoiseTerms noise);

  const Standardizer& standardizer() const noexcept { return standardizer_; }
  const KernelHyper& hyper() const noexcept { return hyper_; }
  const NoiseTerms& noise() const noexcept { return noise_; }
  void set_hyper(KernelHyper hyper, NoiseTerms noise);

  // Takes raw points; standardizes internally. Throws MapSolverError on
  // Newton failure, leaving the previous fit in place.
  void fit(FeedbackDataset raw, const std::optional<Eigen::VectorXd>& init = {});
  bool fitted() const noexcept { return fitted_; }
  std::size_t size() const noexcept { return points_.size(); }

  // Standardized copy of a raw dataset, for evidence and selection routines.
  FeedbackDataset standardize(const FeedbackDataset& raw) const;

  const Eigen::VectorXd& map_rewards() const;
  const std::vector<Eigen::VectorXd>& points() const noexcept { return points_; }
  const MapResult& last_fit() const noexcept { return last_fit_; }

  RewardPrediction predict(const Eigen::VectorXd& raw_point) const;
  std::vector<RewardPrediction> predict(std::span<const Eigen::VectorXd> raw_points) const;

  // Versioned text snapshot: standardizer, hyper, noise, points, map rewards.
  std::string snapshot() const;
  static RewardModel from_snapshot(std::string_view text);

 private:
  void refactor();

  Standardizer standardizer_;
  KernelHyper hyper_;
  NoiseTerms noise_;
  std::vector<Eigen::VectorXd> points_;  // standardized
  GramFactor gram_;
  Eigen::VectorXd map_rewards_;
  Eigen::VectorXd alpha_;
  MapResult last_fit_;
  bool fitted_ = false;
};

}  // namespace handover
