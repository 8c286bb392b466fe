#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loop/trial_config.hpp"
#include "policy/gaussian_policy.hpp"

namespace handover {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample std, 0 for fewer than two values
};

MeanStd mean_std(std::span<const double> values);

struct EvalRow {
  double hand_speed = 0.0;
  int rollouts = 0;
  double stiffness_y = 0.0;  // applied (clamped) policy mean at this context
  double success_rate = 0.0;
  MeanStd duration;
  MeanStd peak_force;
  MeanStd peak_jerk;
  MeanStd reward;
};

struct EvalOptions {
  int rollouts = 100;
  // Draw params from the policy; otherwise every rollout uses the clamped
  // mean and only the simulator's human jitter varies.
  bool sample = false;
};

// Per-context statistics over seeded rollouts. Rollout i at context k uses
// a stream keyed by (cfg.seed, k, i); no rows for zero rollouts.
std::vector<EvalRow> evaluate_policy(const GaussianContextualPolicy& policy, const TrialConfig& cfg,
                                     std::span<const double> contexts, const EvalOptions& options);

void write_eval_table(std::ostream& out, std::span<const EvalRow> rows);

struct CurveRow {
  int update = 0;
  int experiments = 0;
  int trials = 0;  // trials contributing to this row
  double latent_mean = 0.0;
  double latent_lo = 0.0;
  double latent_hi = 0.0;
  std::optional<double> oracle_mean;
  std::optional<double> oracle_lo;
  std::optional<double> oracle_hi;
};

struct CurveExport {
  std::vector<CurveRow> rows;
  std::vector<std::string> warnings;
};

// Aggregates log.jsonl across trial directories: mean and a normal 95%
// band (mean +- 1.96 sd / sqrt(n)) per update. A single trial gives a band
// equal to its mean. Trials with missing iterations contribute what they
// have and add a warning.
CurveExport aggregate_curves(std::span<const std::filesystem::path> trial_dirs);

void write_curve(std::ostream& out, const CurveExport& curve);

}  // namespace handover
