#pragma once

#include <optional>

#include "core/random.hpp"
#include "core/types.hpp"
#include "sim/handover_sim.hpp"

namespace handover {

// Simulated human rater. The learner never sees these internals, only the
// FeedbackEvents produced from them.
struct OracleConfig {
  double w_fail = 8.0;
  double w_duration = 5.0;
  double w_force = 2.0;
  double w_jerk = 2.0;
  double force_scale = 20.0;   // N
  double jerk_scale = 500.0;   // m/s^3
  double duration_lo = 0.4;    // s
  double duration_hi = 0.6;    // s
  double late_speed_weight = 2.0;  // late-penalty growth per m/s of hand speed
  double sigma_p = 0.5;        // preference noise of the simulated human
  double sigma_r = 0.5;        // rating noise std of the simulated human
  double abs_threshold = 2.5;  // |r - 5.5| above this gives an absolute rating

  void validate() const;
};

// Saturating penalty in [0, 1): x^2 / (x^2 + scale^2).
double saturating_penalty(double x, double scale) noexcept;

// 0 inside [lo, hi]; rises linearly outside, the slow side weighted more for
// faster hands; capped at 1.
double duration_penalty(double duration, const Context& s, const OracleConfig& cfg) noexcept;

double ground_truth_reward(const HandoverMetrics& m, const Context& s, const OracleConfig& cfg);

// r_true + N(0, sigma_r), rounded to the nearest 0.5, clamped to [1, 10].
double absolute_feedback(double r_true, RandomSource& rng, const OracleConfig& cfg);

double preference_probability(double r1, double r2, double sigma_p);

// 1 if the first experiment wins, 2 otherwise.
int preference_feedback(double r1, double r2, RandomSource& rng, const OracleConfig& cfg);

struct RatedExperiment {
  ExperimentId id = 0;
  double true_reward = 0.0;
};

// Absolute for clearly good or bad outcomes (or with no predecessor),
// otherwise a preference against the previous experiment.
FeedbackEvent give_feedback(const RatedExperiment& current,
                            const std::optional<RatedExperiment>& previous, RandomSource& rng,
                            const OracleConfig& cfg);

}  // namespace handover
