#include "oracle/feedback_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "core/error.hpp"
#include "reward/probit.hpp"

namespace handover {

namespace {

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw ConfigError(std::string("oracle.") + field, what);
}

}  // namespace

void OracleConfig::validate() const {
  require(std::isfinite(w_fail) && w_fail >= 0.0, "w_fail", "must be non-negative");
  require(std::isfinite(w_duration) && w_duration >= 0.0, "w_duration", "must be non-negative");
  require(std::isfinite(w_force) && w_force >= 0.0, "w_force", "must be non-negative");
  require(std::isfinite(w_jerk) && w_jerk >= 0.0, "w_jerk", "must be non-negative");
  require(std::isfinite(force_scale) && force_scale > 0.0, "force_scale", "must be positive");
  require(std::isfinite(jerk_scale) && jerk_scale > 0.0, "jerk_scale", "must be positive");
  require(std::isfinite(duration_lo) && std::isfinite(duration_hi) && duration_lo > 0.0 &&
              duration_lo < duration_hi,
          "duration_hi", "must exceed duration_lo > 0");
  require(std::isfinite(late_speed_weight) && late_speed_weight >= 0.0, "late_speed_weight",
          "must be non-negative");
  require(std::isfinite(sigma_p) && sigma_p > 0.0, "sigma_p", "must be positive");
  require(std::isfinite(sigma_r) && sigma_r > 0.0, "sigma_r", "must be positive");
  require(std::isfinite(abs_threshold) && abs_threshold >= 0.0 && abs_threshold <= 4.5,
          "abs_threshold", "must lie in [0, 4.5]");
}

double saturating_penalty(double x, double scale) noexcept {
  const double q = x / scale;
  return q * q / (1.0 + q * q);
}

double duration_penalty(double duration, const Context& s, const OracleConfig& cfg) noexcept {
  const double early = std::max(0.0, cfg.duration_lo - duration) / 0.3;
  const double late = std::max(0.0, duration - cfg.duration_hi) *
                      (1.0 + cfg.late_speed_weight * s.hand_speed()) / 0.8;
  return std::min(1.0, early + late);
}

double ground_truth_reward(const HandoverMetrics& m, const Context& s, const OracleConfig& cfg) {
  if (!std::isfinite(m.duration) || !std::isfinite(m.peak_force) || !std::isfinite(m.peak_jerk)) {
    fail(ErrorCode::InvalidArgument, "metrics must be finite");
  }
  double r = 10.0;
  if (!m.success) r -= cfg.w_fail;
  // A failed handover never finished, so it takes the full duration penalty.
  r -= cfg.w_duration * (m.success ? duration_penalty(m.duration, s, cfg) : 1.0);
  r -= cfg.w_force * saturating_penalty(m.peak_force, cfg.force_scale);
  r -= cfg.w_jerk * saturating_penalty(m.peak_jerk, cfg.jerk_scale);
  return std::clamp(r, kRatingMin, kRatingMax);
}

double absolute_feedback(double r_true, RandomSource& rng, const OracleConfig& cfg) {
  const double noisy = r_true + cfg.sigma_r * rng.normal();
  return std::clamp(std::round(noisy * 2.0) / 2.0, kRatingMin, kRatingMax);
}

double preference_probability(double r1, double r2, double sigma_p) {
  return normal_cdf((r1 - r2) / (std::numbers::sqrt2 * sigma_p));
}

int preference_feedback(double r1, double r2, RandomSource& rng, const OracleConfig& cfg) {
  if (!std::isfinite(r1) || !std::isfinite(r2)) fail(ErrorCode::InvalidArgument, "rewards must be finite");
  return rng.uniform(0.0, 1.0) < preference_probability(r1, r2, cfg.sigma_p) ? 1 : 2;
}

FeedbackEvent give_feedback(const RatedExperiment& current,
                            const std::optional<RatedExperiment>& previous, RandomSource& rng,
                            const OracleConfig& cfg) {
  if (!previous || std::abs(current.true_reward - 5.5) > cfg.abs_threshold) {
    return FeedbackEvent::absolute(current.id, absolute_feedback(current.true_reward, rng, cfg));
  }
  const int winner = preference_feedback(current.true_reward, previous->true_reward, rng, cfg);
  return winner == 1 ? FeedbackEvent::preference(current.id, previous->id)
                     : FeedbackEvent::preference(previous->id, current.id);
}

}  // namespace handover
