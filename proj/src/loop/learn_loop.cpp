#include "loop/learn_loop.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include <json.hpp>

#include "core/error.hpp"
#include "core/parallel.hpp"
#include "loop/trial_json.hpp"
#include "oracle/feedback_oracle.hpp"

namespace handover {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

// Stream keys for TrialStreams.
constexpr std::uint64_t kSamplingStream = 1;
constexpr std::uint64_t kSimulationStream = 2;
constexpr std::uint64_t kFeedbackStream = 3;
constexpr std::uint64_t kPredictionStream = 4;
constexpr std::uint64_t kEvaluationStream = 5;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Context draw_context(const ContextBounds& bounds, RandomSource& rng) {
  return Context(rng.uniform(bounds.lo, bounds.hi));
}

ControllerParams draw_params(const GaussianContextualPolicy& policy, const Context& s,
                             const ParamBounds& bounds, RandomSource& rng) {
  return sample_action(policy, s, rng, bounds);
}

}  // namespace

OracleFeedback::OracleFeedback(OracleConfig cfg, RandomSource stream)
    : cfg_(std::move(cfg)), stream_(std::move(stream)) {
  cfg_.validate();
}

FeedbackEvent OracleFeedback::request(const FeedbackRequest& req) {
  if (!req.record || !req.metrics) fail(ErrorCode::InvalidArgument, "feedback request is incomplete");
  RandomSource rng = stream_.derive(static_cast<std::uint64_t>(req.record->id));
  const RatedExperiment current{req.record->id,
                                ground_truth_reward(*req.metrics, req.record->context, cfg_)};
  std::optional<RatedExperiment> previous;
  if (req.previous && req.previous_metrics) {
    previous = RatedExperiment{req.previous->id,
                               ground_truth_reward(*req.previous_metrics, req.previous->context, cfg_)};
  }
  return give_feedback(current, previous, rng, cfg_);
}

const ExperimentRecord& TrialHistory::record(ExperimentId id) const {
  if (id < 1 || static_cast<std::size_t>(id) > records.size()) {
    fail(ErrorCode::NotFound, "unknown experiment id " + std::to_string(id));
  }
  return records[static_cast<std::size_t>(id - 1)];
}

FeedbackDataset TrialHistory::dataset() const {
  FeedbackDataset data;
  data.points.reserve(records.size());
  for (const auto& r : records) data.points.push_back(JointPoint::make(r.context, r.params).y);
  for (const auto& e : feedback) {
    if (e.is_absolute()) {
      const auto& a = e.as_absolute();
      data.ratings.push_back({static_cast<std::size_t>(a.sample_id - 1), a.value});
    } else {
      const auto& p = e.as_preference();
      data.comparisons.push_back(
          {static_cast<std::size_t>(p.winner_id - 1), static_cast<std::size_t>(p.loser_id - 1)});
    }
  }
  return data;
}

void TrialHistory::add_feedback(const FeedbackEvent& event) {
  const auto ids = event.referenced_ids();
  for (ExperimentId id : ids) (void)record(id);
  const std::size_t index = feedback.size();
  feedback.push_back(event);
  for (ExperimentId id : ids) records[static_cast<std::size_t>(id - 1)].feedback.push_back(index);
}

TrialStreams::TrialStreams(std::uint64_t seed) : root_(seeded_rng(seed)) {}

RandomSource TrialStreams::sampling(ExperimentId id) const {
  return root_.derive(kSamplingStream).derive(static_cast<std::uint64_t>(id));
}

RandomSource TrialStreams::simulation(ExperimentId id) const {
  return root_.derive(kSimulationStream).derive(static_cast<std::uint64_t>(id));
}

RandomSource TrialStreams::feedback() const { return root_.derive(kFeedbackStream); }

RandomSource TrialStreams::prediction(int update) const {
  return root_.derive(kPredictionStream).derive(static_cast<std::uint64_t>(update));
}

RandomSource TrialStreams::evaluation(std::size_t draw) const {
  return root_.derive(kEvaluationStream).derive(draw);
}

ExperimentResult run_experiment(const ControllerParams& params, const Context& s,
                                const TrialConfig& cfg, RandomSource sim_rng) {
  ExperimentResult result;
  result.params = params;
  try {
    result.trace = simulate_handover(params, s, cfg.sim, sim_rng);
    result.outcome.metrics = extract_metrics(result.trace);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DivergedRollout) throw;
    result.trace = RolloutTrace{};
    result.trace.dt = cfg.sim.dt;
    result.trace.horizon = cfg.sim.horizon;
    result.trace.hand_speed = s.hand_speed();
    result.outcome.metrics = failed_metrics(cfg.sim);
    result.outcome.diverged = true;
  }
  if (cfg.feedback == FeedbackMode::Oracle) {
    result.outcome.oracle_reward = ground_truth_reward(result.outcome.metrics, s, cfg.oracle);
  }
  return result;
}

std::vector<ExperimentId> collect_batch(const GaussianContextualPolicy& policy,
                                        const TrialConfig& cfg, int count,
                                        const TrialStreams& streams, FeedbackSource& source,
                                        TrialHistory& history) {
  if (count <= 0) fail(ErrorCode::InvalidArgument, "batch size must be positive");
  std::vector<ExperimentId> ids;
  const auto first = static_cast<ExperimentId>(history.size()) + 1;

  // Rollouts are independent given their streams; only feedback is sequential.
  std::vector<ExperimentRecord> records(static_cast<std::size_t>(count));
  std::vector<ExperimentResult> results(static_cast<std::size_t>(count));
  parallel_for(records.size(), [&](std::size_t k) {
    const ExperimentId id = first + static_cast<ExperimentId>(k);
    RandomSource rng = streams.sampling(id);
    ExperimentRecord& rec = records[k];
    rec.id = id;
    rec.context = draw_context(cfg.contexts, rng);
    rec.params = draw_params(policy, rec.context, cfg.bounds, rng);
    results[k] = run_experiment(rec.params, rec.context, cfg, streams.simulation(id));
  });

  // Preferences pair an experiment with its predecessor in the same batch.
  for (std::size_t k = 0; k < records.size(); ++k) {
    const bool has_previous = k > 0;
    history.records.push_back(std::move(records[k]));
    history.outcomes.push_back(results[k].outcome);
    const std::size_t n = history.records.size();

    FeedbackRequest req;
    req.record = &history.records[n - 1];
    req.trace = &results[k].trace;
    req.metrics = &history.outcomes[n - 1].metrics;
    if (has_previous) {
      req.previous = &history.records[n - 2];
      req.previous_metrics = &history.outcomes[n - 2].metrics;
      if (history.last_trace) req.previous_trace = &*history.last_trace;
    }
    const FeedbackEvent event = source.request(req);
    const auto refs = event.referenced_ids();
    const ExperimentId id = history.records[n - 1].id;
    const bool refers_current = std::find(refs.begin(), refs.end(), id) != refs.end();
    const bool refers_known = std::all_of(refs.begin(), refs.end(), [&](ExperimentId r) {
      return r == id || (has_previous && r == id - 1);
    });
    if (!refers_current || !refers_known) {
      fail(ErrorCode::Conflict, "feedback must refer to the pending experiment");
    }
    history.add_feedback(event);
    history.last_trace = std::move(results[k].trace);
    ids.push_back(id);
  }
  return ids;
}

bool reestimate_rewards(TrialHistory& history, RewardModel& model) {
  if (history.feedback.empty()) fail(ErrorCode::State, "no feedback to estimate rewards from");
  try {
    model.fit(history.dataset());
  } catch (const MapSolverError&) {
    return false;
  }
  const Eigen::VectorXd& r = model.map_rewards();
  for (std::size_t i = 0; i < history.records.size(); ++i) {
    history.records[i].latent_reward = r(static_cast<Eigen::Index>(i));
  }
  return true;
}

std::vector<PolicySample> predict_artificial(const GaussianContextualPolicy& policy,
                                             const RewardModel& model, const TrialConfig& cfg,
                                             RandomSource& rng) {
  const auto q = static_cast<std::size_t>(cfg.artificial_samples);
  std::vector<PolicySample> samples(q);
  std::vector<Eigen::VectorXd> points(q);
  for (std::size_t j = 0; j < q; ++j) {
    const Context s = draw_context(cfg.contexts, rng);
    const ControllerParams a = draw_params(policy, s, cfg.bounds, rng);
    samples[j].context = s.features();
    samples[j].params = a.to_vector();
    points[j] = JointPoint::make(s, a).y;
  }
  const auto predictions = model.predict(points);
  for (std::size_t j = 0; j < q; ++j) samples[j].reward = predictions[j].mean;
  return samples;
}

double expected_oracle_reward(const GaussianContextualPolicy& policy, const TrialConfig& cfg,
                              const TrialStreams& streams, int draws) {
  if (draws <= 0) fail(ErrorCode::InvalidArgument, "need at least one draw");
  std::vector<double> rewards(static_cast<std::size_t>(draws));
  parallel_for(rewards.size(), [&](std::size_t i) {
    RandomSource rng = streams.evaluation(i);
    const Context s = draw_context(cfg.contexts, rng);
    const ControllerParams a = draw_params(policy, s, cfg.bounds, rng);
    const auto result = run_experiment(a, s, cfg, rng.derive(0));
    rewards[i] = ground_truth_reward(result.outcome.metrics, s, cfg.oracle);
  });
  return std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(draws);
}

GaussianContextualPolicy initial_policy(const TrialConfig& cfg) {
  Eigen::VectorXd mean(static_cast<Eigen::Index>(kParamDim));
  Eigen::VectorXd var(static_cast<Eigen::Index>(kParamDim));
  for (std::size_t i = 0; i < kParamDim; ++i) {
    mean(static_cast<Eigen::Index>(i)) = cfg.initial_policy.mean[i];
    var(static_cast<Eigen::Index>(i)) = cfg.initial_policy.variance[i];
  }
  return GaussianContextualPolicy::initial(mean, var);
}

LearningTrial::LearningTrial(TrialConfig cfg, FeedbackSource& source)
    : cfg_(std::move(cfg)),
      source_(&source),
      streams_(cfg_.seed),
      model_(Standardizer::from_bounds(cfg_.contexts, cfg_.bounds), cfg_.reward.defaults().kernel,
             cfg_.reward.defaults().noise) {
  cfg_.validate();
  policies_.push_back(initial_policy(cfg_));
}

const IterationLog& LearningTrial::step() {
  if (done()) fail(ErrorCode::State, "trial already finished");
  const int t = completed_updates() + 1;
  const GaussianContextualPolicy& current = policies_.back();
  IterationLog log;
  IterationTiming timing;
  log.update = t;
  timing.update = t;
  log.policy_in = current.fingerprint();

  auto t0 = std::chrono::steady_clock::now();
  const auto ids = collect_batch(current, cfg_, cfg_.batch_size_for(t), streams_, *source_, history_);
  timing.collect_s = seconds_since(t0);
  log.first_id = ids.front();
  log.last_id = ids.back();
  log.experiments = static_cast<int>(history_.size());

  t0 = std::chrono::steady_clock::now();
  const int every = cfg_.reward.reselect_every;
  if (every > 0 && (t - 1) % every == 0) {
    const HyperCandidate defaults = cfg_.reward.defaults();
    const auto grid = default_hyper_grid(defaults);
    const auto selection =
        select_hyperparameters(model_.standardize(history_.dataset()), grid, defaults);
    model_.set_hyper(selection.chosen.kernel, selection.chosen.noise);
    log.reselected = true;
    log.evidence = selection.evidence;
    log.hyper_fallback = selection.fallback;
  }
  log.solver_failed = !reestimate_rewards(history_, model_);
  timing.fit_s = seconds_since(t0);
  log.signal_var = model_.hyper().signal_var;
  log.lengthscales.assign(model_.hyper().lengthscales.data(),
                          model_.hyper().lengthscales.data() + model_.hyper().lengthscales.size());
  log.sigma_p = model_.noise().sigma_p;
  log.sigma_r = model_.noise().sigma_r;

  double latent = 0.0;
  double oracle = 0.0;
  for (ExperimentId id : ids) {
    const auto i = static_cast<std::size_t>(id - 1);
    latent += history_.records[i].latent_reward.value_or(0.0);
    if (history_.outcomes[i].oracle_reward) oracle += *history_.outcomes[i].oracle_reward;
    if (history_.outcomes[i].diverged) ++log.diverged;
  }
  log.expected_latent_reward = latent / static_cast<double>(ids.size());
  if (cfg_.feedback == FeedbackMode::Oracle) {
    log.batch_oracle_reward = oracle / static_cast<double>(ids.size());
  }

  t0 = std::chrono::steady_clock::now();
  if (!model_.fitted()) fail(ErrorCode::Solver, "reward model could not be fitted");
  RandomSource prediction_rng = streams_.prediction(t);
  const auto samples = predict_artificial(current, model_, cfg_, prediction_rng);
  timing.predict_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  CrepsStep next = creps_update(current, samples, cfg_.epsilon);
  timing.update_s = seconds_since(t0);
  log.eta = next.dual.eta;
  log.kl = next.kl;
  log.dual_fallback = next.dual.fallback;
  log.gain_kept = next.gain_kept;
  log.policy_out = next.policy.fingerprint();

  t0 = std::chrono::steady_clock::now();
  if (cfg_.feedback == FeedbackMode::Oracle && cfg_.eval_rollouts > 0) {
    log.expected_oracle_reward = expected_oracle_reward(current, cfg_, streams_, cfg_.eval_rollouts);
  }
  timing.eval_s = seconds_since(t0);

  policies_.push_back(std::move(next.policy));
  logs_.push_back(std::move(log));
  timings_.push_back(timing);
  return logs_.back();
}

std::string LearningTrial::checkpoint() const {
  json records = json::array();
  for (std::size_t i = 0; i < history_.size(); ++i) {
    records.push_back(record_json(history_.records[i], history_.outcomes[i]));
  }
  json feedback = json::array();
  for (const auto& e : history_.feedback) feedback.push_back(feedback_json(e));
  json policies = json::array();
  for (const auto& p : policies_) policies.push_back(p.snapshot());
  json logs = json::array();
  for (const auto& l : logs_) logs.push_back(iteration_json(l));
  const auto& h = model_.hyper();
  json j = {{"version", kCheckpointVersion},
            {"config", json::parse(dump_trial_config(cfg_))},
            {"records", records},
            {"feedback", feedback},
            {"policies", policies},
            {"logs", logs},
            {"model",
             {{"signal_var", h.signal_var},
              {"lengthscales", std::vector<double>(h.lengthscales.data(),
                                                   h.lengthscales.data() + h.lengthscales.size())},
              {"sigma_p", model_.noise().sigma_p},
              {"sigma_r", model_.noise().sigma_r}}}};
  return j.dump() + "\n";
}

LearningTrial LearningTrial::resume(TrialConfig cfg, FeedbackSource& source,
                                    const std::string& checkpoint) {
  json j;
  try {
    j = json::parse(checkpoint);
  } catch (const json::parse_error&) {
    fail(ErrorCode::InvalidArgument, "checkpoint is not valid JSON");
  }
  if (j.value("version", 0) != kCheckpointVersion) {
    fail(ErrorCode::InvalidArgument, "unsupported checkpoint version");
  }
  if (j.at("config") != json::parse(dump_trial_config(cfg))) {
    fail(ErrorCode::Conflict, "checkpoint was written for a different configuration");
  }
  LearningTrial trial(std::move(cfg), source);
  try {
    for (const auto& r : j.at("records")) {
      ExperimentRecord rec;
      ExperimentOutcome out;
      record_from_json(r, rec, out);
      trial.history_.records.push_back(std::move(rec));
      trial.history_.outcomes.push_back(out);
    }
    for (const auto& f : j.at("feedback")) trial.history_.feedback.push_back(feedback_from_json(f));
    trial.policies_.clear();
    for (const auto& p : j.at("policies")) {
      trial.policies_.push_back(GaussianContextualPolicy::from_snapshot(p.get<std::string>()));
    }
    for (const auto& l : j.at("logs")) trial.logs_.push_back(iteration_from_json(l));
    const auto& m = j.at("model");
    const auto ls = m.at("lengthscales").get<std::vector<double>>();
    KernelHyper hyper{m.at("signal_var").get<double>(),
                      Eigen::Map<const Eigen::VectorXd>(ls.data(), static_cast<Eigen::Index>(ls.size()))};
    trial.model_.set_hyper(hyper, NoiseTerms{m.at("sigma_p").get<double>(), m.at("sigma_r").get<double>()});
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("malformed checkpoint: ") + e.what());
  }
  if (trial.policies_.size() != trial.logs_.size() + 1) {
    fail(ErrorCode::InvalidArgument, "checkpoint policy count does not match its logs");
  }
  if (!trial.history_.feedback.empty()) {
    // Cold-start refit reproduces the saved optimum exactly.
    reestimate_rewards(trial.history_, trial.model_);
  }
  if (!trial.history_.records.empty()) {
    const auto& last = trial.history_.records.back();
    trial.history_.last_trace =
        run_experiment(last.params, last.context, trial.cfg_, trial.streams_.simulation(last.id)).trace;
  }
  return trial;
}

}  // namespace handover
