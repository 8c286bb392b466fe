#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "core/types.hpp"
#include "oracle/feedback_oracle.hpp"
#include "reward/latent_reward.hpp"
#include "sim/handover_sim.hpp"

namespace handover {

inline constexpr int kTrialConfigVersion = 1;

enum class FeedbackMode { Oracle, Interactive };

const char* to_string(FeedbackMode mode) noexcept;

struct InitialPolicyConfig {
  std::array<double, kParamDim> mean{2.75, 275.0, 450.0, 275.0, 2.5, 200.0, 600.0};
  std::array<double, kParamDim> variance{0.25, 2500.0, 5625.0, 2500.0, 0.25, 2500.0, 22500.0};
};

struct RewardModelConfig {
  double signal_var = 4.0;
  double lengthscale = 4.0;  // standardized units
  double sigma_p = 0.8;
  double sigma_r = 0.8;
  int reselect_every = 2;  // updates between hyperparameter searches; 0 disables

  HyperCandidate defaults() const;
};

struct TrialConfig {
  int version = kTrialConfigVersion;
  std::uint64_t seed = 1;
  double epsilon = 0.75;
  int batch_size = 10;
  int first_batch = 40;
  int artificial_samples = 500;
  int updates = 10;
  int eval_rollouts = 500;  // Monte Carlo draws for the expected oracle reward; 0 disables
  ContextBounds contexts;
  FeedbackMode feedback = FeedbackMode::Oracle;
  double stall_timeout = 600.0;  // s without feedback before a session reports stalled
  InitialPolicyConfig initial_policy;
  ParamBounds bounds;
  RewardModelConfig reward;
  SimConfig sim;
  OracleConfig oracle;

  // Total real experiments after all updates.
  int total_experiments() const noexcept { return first_batch + (updates - 1) * batch_size; }
  int batch_size_for(int update) const noexcept { return update == 1 ? first_batch : batch_size; }

  // Throws ConfigError naming the first offending field.
  void validate() const;
};

// Missing keys keep their defaults; unknown keys and type mismatches are
// rejected with the field path.
TrialConfig parse_trial_config(std::string_view json_text);
TrialConfig load_trial_config(const std::string& path);
std::string dump_trial_config(const TrialConfig& cfg);

}  // namespace handover
