#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/random.hpp"
#include "core/types.hpp"
#include "loop/trial_config.hpp"
#include "policy/creps.hpp"
#include "policy/gaussian_policy.hpp"
#include "reward/reward_model.hpp"
#include "sim/handover_sim.hpp"

namespace handover {

struct ExperimentOutcome {
  HandoverMetrics metrics;
  bool diverged = false;
  std::optional<double> oracle_reward;  // oracle mode only
};

// Everything a rater needs to judge one experiment, plus its predecessor
// for a pairwise comparison.
struct FeedbackRequest {
  const ExperimentRecord* record = nullptr;
  const RolloutTrace* trace = nullptr;
  const HandoverMetrics* metrics = nullptr;
  const ExperimentRecord* previous = nullptr;
  const RolloutTrace* previous_trace = nullptr;
  const HandoverMetrics* previous_metrics = nullptr;
};

class FeedbackSource {
 public:
  virtual ~FeedbackSource() = default;
  // Blocks until feedback for request.record (optionally paired with
  // request.previous) is available.
  virtual FeedbackEvent request(const FeedbackRequest& request) = 0;
};

// Simulated rater: ground-truth reward from the metrics, then give_feedback
// against the immediately preceding experiment.
class OracleFeedback final : public FeedbackSource {
 public:
  OracleFeedback(OracleConfig cfg, RandomSource stream);
  FeedbackEvent request(const FeedbackRequest& request) override;

 private:
  OracleConfig cfg_;
  RandomSource stream_;
};

// Records, outcomes and the feedback log of one trial. Records only grow;
// latent rewards are the only field rewritten after creation.
struct TrialHistory {
  std::vector<ExperimentRecord> records;
  std::vector<ExperimentOutcome> outcomes;
  std::vector<FeedbackEvent> feedback;
  std::optional<RolloutTrace> last_trace;

  std::size_t size() const noexcept { return records.size(); }
  const ExperimentRecord& record(ExperimentId id) const;
  // Raw joint points with 0-based feedback indices, as the reward model takes them.
  FeedbackDataset dataset() const;
  // Appends and cross-references; throws on unknown ids.
  void add_feedback(const FeedbackEvent& event);
};

// Named random streams; every draw is keyed by experiment id or update index,
// so a trial is a pure function of its seed.
struct TrialStreams {
  explicit TrialStreams(std::uint64_t seed);
  RandomSource sampling(ExperimentId id) const;
  RandomSource simulation(ExperimentId id) const;
  RandomSource feedback() const;
  RandomSource prediction(int update) const;
  RandomSource evaluation(std::size_t draw) const;

 private:
  RandomSource root_;
};

struct ExperimentResult {
  ControllerParams params;
  RolloutTrace trace;
  ExperimentOutcome outcome;
};

// Simulates one handover; diverged rollouts get worst-case metrics.
ExperimentResult run_experiment(const ControllerParams& params, const Context& s,
                                const TrialConfig& cfg, RandomSource sim_rng);

// Draws `count` experiments from the policy, simulates them and collects
// one feedback event each. Ids continue from the history.
std::vector<ExperimentId> collect_batch(const GaussianContextualPolicy& policy,
                                        const TrialConfig& cfg, int count,
                                        const TrialStreams& streams, FeedbackSource& source,
                                        TrialHistory& history);

// Refits the model on the full history and writes every latent reward.
// Returns false (rewards untouched) when the solver fails.
bool reestimate_rewards(TrialHistory& history, RewardModel& model);

// Q draws from mu(s) pi(a|s) scored by the model's predictive mean.
std::vector<PolicySample> predict_artificial(const GaussianContextualPolicy& policy,
                                             const RewardModel& model, const TrialConfig& cfg,
                                             RandomSource& rng);

// Monte Carlo expected ground-truth reward of a policy over mu(s). Draw i
// uses evaluation stream i, so different policies see common random numbers.
double expected_oracle_reward(const GaussianContextualPolicy& policy, const TrialConfig& cfg,
                              const TrialStreams& streams, int draws);

GaussianContextualPolicy initial_policy(const TrialConfig& cfg);

struct IterationLog {
  int update = 0;
  int experiments = 0;  // E after this batch
  ExperimentId first_id = 0;
  ExperimentId last_id = 0;
  double expected_latent_reward = 0.0;
  std::optional<double> expected_oracle_reward;
  std::optional<double> batch_oracle_reward;
  std::uint64_t policy_in = 0;
  std::uint64_t policy_out = 0;
  bool reselected = false;
  double evidence = 0.0;
  bool hyper_fallback = false;
  double signal_var = 0.0;
  std::vector<double> lengthscales;
  double sigma_p = 0.0;
  double sigma_r = 0.0;
  bool solver_failed = false;
  double eta = 0.0;
  double kl = 0.0;
  bool dual_fallback = false;
  bool gain_kept = false;
  int diverged = 0;
};

struct IterationTiming {
  int update = 0;
  double collect_s = 0.0;
  double fit_s = 0.0;
  double predict_s = 0.0;
  double update_s = 0.0;
  double eval_s = 0.0;
};

class LearningTrial {
 public:
  LearningTrial(TrialConfig cfg, FeedbackSource& source);

  const TrialConfig& config() const noexcept { return cfg_; }
  int completed_updates() const noexcept { return static_cast<int>(logs_.size()); }
  bool done() const noexcept { return completed_updates() >= cfg_.updates; }

  // One iteration: collect, re-estimate, predict, update, log.
  const IterationLog& step();

  const TrialHistory& history() const noexcept { return history_; }
  const GaussianContextualPolicy& policy() const noexcept { return policies_.back(); }
  // policies()[t] is the policy after update t; [0] is the initial one.
  const std::vector<GaussianContextualPolicy>& policies() const noexcept { return policies_; }
  const RewardModel& model() const noexcept { return model_; }
  const std::vector<IterationLog>& logs() const noexcept { return logs_; }
  const std::vector<IterationTiming>& timings() const noexcept { return timings_; }
  const TrialStreams& streams() const noexcept { return streams_; }

  // State after the last completed update, as JSON text.
  std::string checkpoint() const;
  // Rebuilds a trial from checkpoint(); the config must match the one saved.
  static LearningTrial resume(TrialConfig cfg, FeedbackSource& source, const std::string& checkpoint);

 private:
  TrialConfig cfg_;
  FeedbackSource* source_;
  TrialStreams streams_;
  TrialHistory history_;
  RewardModel model_;
  std::vector<GaussianContextualPolicy> policies_;
  std::vector<IterationLog> logs_;
  std::vector<IterationTiming> timings_;
};

}  // namespace handover
