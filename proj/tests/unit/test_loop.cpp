#include <cmath>
#include <string>
#include <vector>

#include <doctest.h>

#include "core/error.hpp"
#include "loop/learn_loop.hpp"
#include "loop/trial_config.hpp"

using namespace handover;

namespace {

TrialConfig quick_config(std::uint64_t seed = 3) {
  TrialConfig cfg;
  cfg.seed = seed;
  cfg.eval_rollouts = 50;
  return cfg;
}

// One learning trial shared by the read-only checks below.
struct Finished {
  TrialConfig cfg = quick_config();
  OracleFeedback source{cfg.oracle, TrialStreams(cfg.seed).feedback()};
  LearningTrial trial{cfg, source};

  Finished() {
    while (!trial.done()) trial.step();
  }
};

const Finished& finished() {
  static const Finished f;
  return f;
}

std::string config_error_field(const std::string& text) {
  try {
    parse_trial_config(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST_SUITE("batches") {
  TEST_CASE("ids are contiguous across batches and each experiment gets feedback") {
    const auto cfg = quick_config();
    const TrialStreams streams(cfg.seed);
    OracleFeedback source(cfg.oracle, streams.feedback());
    TrialHistory history;
    const auto policy = initial_policy(cfg);

    const auto first = collect_batch(policy, cfg, 40, streams, source, history);
    const auto second = collect_batch(policy, cfg, 10, streams, source, history);
    REQUIRE(first.size() == 40);
    REQUIRE(second.size() == 10);
    for (std::size_t k = 0; k < first.size(); ++k) CHECK(first[k] == static_cast<ExperimentId>(k + 1));
    for (std::size_t k = 0; k < second.size(); ++k) CHECK(second[k] == static_cast<ExperimentId>(k + 41));
    CHECK(history.size() == 50);
    CHECK(history.feedback.size() == 50);
    for (const auto& r : history.records) {
      CHECK_FALSE(r.feedback.empty());
      CHECK(r.context.within(cfg.contexts));
    }
    CHECK_NOTHROW(history.record(50));
    CHECK_THROWS_AS(history.record(51), Error);
    CHECK_THROWS_AS(history.record(0), Error);
  }

  TEST_CASE("same seed, same batch") {
    const auto cfg = quick_config(11);
    auto run = [&] {
      const TrialStreams streams(cfg.seed);
      OracleFeedback source(cfg.oracle, streams.feedback());
      TrialHistory h;
      collect_batch(initial_policy(cfg), cfg, 20, streams, source, h);
      return h;
    };
    const auto a = run();
    const auto b = run();
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.records[i].params == b.records[i].params);
      CHECK(a.records[i].context.hand_speed() == b.records[i].context.hand_speed());
      CHECK(a.outcomes[i].metrics.duration == b.outcomes[i].metrics.duration);
    }
    CHECK(a.feedback == b.feedback);
  }

  TEST_CASE("feedback naming other experiments is refused") {
    struct Wrong final : FeedbackSource {
      FeedbackEvent request(const FeedbackRequest& r) override {
        return FeedbackEvent::absolute(r.record->id + 1, 5.0);
      }
    } wrong;
    const auto cfg = quick_config();
    const TrialStreams streams(cfg.seed);
    TrialHistory h;
    CHECK_THROWS_AS(collect_batch(initial_policy(cfg), cfg, 2, streams, wrong, h), Error);
  }

  TEST_CASE("oracle mixes absolute and preference feedback") {
    const auto& h = finished().trial.history();
    std::size_t absolute = 0;
    for (const auto& e : h.feedback) absolute += e.is_absolute();
    const double fraction = static_cast<double>(absolute) / static_cast<double>(h.feedback.size());
    CHECK(fraction >= 0.2);
    CHECK(fraction <= 0.8);
    CHECK(h.feedback.front().is_absolute());
  }

  TEST_CASE("preferences never pair experiments across batches") {
    const auto& f = finished();
    const auto& logs = f.trial.logs();
    const auto& h = f.trial.history();
    for (const auto& log : logs) {
      const auto& first = h.record(log.first_id);
      REQUIRE(first.feedback.size() >= 1);
      CHECK(h.feedback[first.feedback.front()].is_absolute());
    }
  }
}

TEST_SUITE("reward re-estimation") {
  TEST_CASE("a single rating is shrunk toward the prior") {
    const auto cfg = quick_config();
    const TrialStreams streams(cfg.seed);
    struct Nine final : FeedbackSource {
      FeedbackEvent request(const FeedbackRequest& r) override {
        return FeedbackEvent::absolute(r.record->id, 9.0);
      }
    } nine;
    TrialHistory h;
    collect_batch(initial_policy(cfg), cfg, 1, streams, nine, h);
    RewardModel model(Standardizer::from_bounds(cfg.contexts, cfg.bounds),
                      cfg.reward.defaults().kernel, cfg.reward.defaults().noise);
    REQUIRE(reestimate_rewards(h, model));
    const double r = *h.records[0].latent_reward;
    CHECK(r > 0.0);
    CHECK(r < 9.0);
  }

  TEST_CASE("a preference puts the winner above the loser") {
    const auto cfg = quick_config();
    const TrialStreams streams(cfg.seed);
    OracleFeedback source(cfg.oracle, streams.feedback());
    TrialHistory h;
    collect_batch(initial_policy(cfg), cfg, 2, streams, source, h);
    // Keep only the comparison, so nothing else moves either reward.
    h.feedback.clear();
    for (auto& r : h.records) r.feedback.clear();
    h.add_feedback(FeedbackEvent::preference(1, 2));
    RewardModel model(Standardizer::from_bounds(cfg.contexts, cfg.bounds),
                      cfg.reward.defaults().kernel, cfg.reward.defaults().noise);
    REQUIRE(reestimate_rewards(h, model));
    CHECK(*h.records[0].latent_reward > *h.records[1].latent_reward);
  }

  TEST_CASE("refitting unchanged data reproduces the rewards") {
    TrialHistory h = finished().trial.history();
    RewardModel model = finished().trial.model();
    std::vector<double> before;
    for (const auto& r : h.records) before.push_back(*r.latent_reward);
    REQUIRE(reestimate_rewards(h, model));
    for (std::size_t i = 0; i < h.size(); ++i) {
      CHECK(std::abs(*h.records[i].latent_reward - before[i]) <= 1e-10);
    }
  }

  TEST_CASE("no feedback is a state error") {
    TrialHistory h;
    const auto cfg = quick_config();
    RewardModel model(Standardizer::from_bounds(cfg.contexts, cfg.bounds),
                      cfg.reward.defaults().kernel, cfg.reward.defaults().noise);
    CHECK_THROWS_AS(reestimate_rewards(h, model), Error);
  }
}

TEST_SUITE("artificial samples") {
  TEST_CASE("draws Q points from the policy inside the bounds") {
    const auto& f = finished();
    auto rng = seeded_rng(5);
    const auto samples = predict_artificial(f.trial.policy(), f.trial.model(), f.cfg, rng);
    CHECK(samples.size() == 500);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(kParamDim);
    for (const auto& s : samples) {
      CHECK(std::isfinite(s.reward));
      CHECK(s.context(0) >= f.cfg.contexts.lo);
      CHECK(s.context(0) <= f.cfg.contexts.hi);
      for (std::size_t i = 0; i < kParamDim; ++i) {
        CHECK(s.params(static_cast<Eigen::Index>(i)) >= f.cfg.bounds.lo[i]);
        CHECK(s.params(static_cast<Eigen::Index>(i)) <= f.cfg.bounds.hi[i]);
      }
      mean += s.params;
    }
    mean /= 500.0;
    for (std::size_t i = 0; i < kParamDim; ++i) {
      CHECK(mean(static_cast<Eigen::Index>(i)) >= f.cfg.bounds.lo[i]);
      CHECK(mean(static_cast<Eigen::Index>(i)) <= f.cfg.bounds.hi[i]);
    }
  }

  TEST_CASE("a model without data predicts one constant") {
    const auto cfg = quick_config();
    RewardModel model(Standardizer::from_bounds(cfg.contexts, cfg.bounds),
                      cfg.reward.defaults().kernel, cfg.reward.defaults().noise);
    model.fit(FeedbackDataset{});
    auto rng = seeded_rng(6);
    const auto samples = predict_artificial(initial_policy(cfg), model, cfg, rng);
    for (const auto& s : samples) CHECK(s.reward == samples.front().reward);
  }

  TEST_CASE("predictions are reproducible from the stream") {
    const auto& f = finished();
    auto a = seeded_rng(7);
    auto b = seeded_rng(7);
    const auto x = predict_artificial(f.trial.policy(), f.trial.model(), f.cfg, a);
    const auto y = predict_artificial(f.trial.policy(), f.trial.model(), f.cfg, b);
    for (std::size_t j = 0; j < x.size(); ++j) {
      CHECK(x[j].reward == y[j].reward);
      CHECK(x[j].params == y[j].params);
    }
  }
}

TEST_SUITE("learning trial") {
  TEST_CASE("experiment counts follow the batch schedule") {
    const auto& f = finished();
    const auto& logs = f.trial.logs();
    REQUIRE(logs.size() == 10);
    CHECK(logs[0].experiments == 40);
    for (std::size_t t = 1; t < logs.size(); ++t) {
      CHECK(logs[t].experiments == logs[t - 1].experiments + 10);
      CHECK(logs[t].first_id == logs[t - 1].last_id + 1);
    }
    CHECK(f.trial.history().size() == 130);
    CHECK(f.cfg.total_experiments() == 130);
    CHECK(f.trial.done());
  }

  TEST_CASE("each update starts from the previous update's output") {
    const auto& f = finished();
    const auto& logs = f.trial.logs();
    const auto& policies = f.trial.policies();
    REQUIRE(policies.size() == logs.size() + 1);
    CHECK(logs[0].policy_in == initial_policy(f.cfg).fingerprint());
    for (std::size_t t = 0; t < logs.size(); ++t) {
      CHECK(logs[t].policy_in == policies[t].fingerprint());
      CHECK(logs[t].policy_out == policies[t + 1].fingerprint());
      if (t > 0) CHECK(logs[t].policy_in == logs[t - 1].policy_out);
    }
  }

  TEST_CASE("updates respect the KL bound loosely and log usable diagnostics") {
    for (const auto& log : finished().trial.logs()) {
      CHECK(log.kl <= finished().cfg.epsilon + 0.05);
      CHECK(log.eta > 0.0);
      CHECK_FALSE(log.solver_failed);
      CHECK(log.expected_oracle_reward.has_value());
      CHECK(log.batch_oracle_reward.has_value());
      CHECK(log.lengthscales.size() == kJointDim);
    }
  }

  TEST_CASE("every experiment ends with a latent reward") {
    for (const auto& r : finished().trial.history().records) CHECK(r.latent_reward.has_value());
  }

  TEST_CASE("a finished trial refuses further steps") {
    LearningTrial copy = finished().trial;
    CHECK_THROWS_AS(copy.step(), Error);
  }

  TEST_CASE("history only grows and earlier records keep their inputs") {
    const auto cfg = quick_config(21);
    OracleFeedback source(cfg.oracle, TrialStreams(cfg.seed).feedback());
    LearningTrial trial(cfg, source);
    std::vector<ExperimentRecord> seen;
    for (int t = 0; t < 3; ++t) {
      trial.step();
      const auto& records = trial.history().records;
      REQUIRE(records.size() >= seen.size());
      for (std::size_t i = 0; i < seen.size(); ++i) {
        CHECK(records[i].id == seen[i].id);
        CHECK(records[i].params == seen[i].params);
        CHECK(records[i].context.hand_speed() == seen[i].context.hand_speed());
        CHECK(records[i].feedback == seen[i].feedback);
      }
      seen = records;
    }
  }

  TEST_CASE("resuming a checkpoint matches the uninterrupted run") {
    auto cfg = quick_config(8);
    cfg.updates = 4;
    OracleFeedback full_source(cfg.oracle, TrialStreams(cfg.seed).feedback());
    LearningTrial full(cfg, full_source);
    while (!full.done()) full.step();

    OracleFeedback first_source(cfg.oracle, TrialStreams(cfg.seed).feedback());
    LearningTrial first(cfg, first_source);
    first.step();
    first.step();
    const std::string saved = first.checkpoint();

    // Oracle draws are keyed by experiment id, so a fresh source is fine.
    OracleFeedback resumed_source(cfg.oracle, TrialStreams(cfg.seed).feedback());
    LearningTrial resumed = LearningTrial::resume(cfg, resumed_source, saved);
    CHECK(resumed.completed_updates() == 2);
    while (!resumed.done()) resumed.step();
    CHECK(resumed.checkpoint() == full.checkpoint());
    for (std::size_t t = 0; t < full.logs().size(); ++t) {
      CHECK(resumed.logs()[t].policy_out == full.logs()[t].policy_out);
      CHECK(resumed.logs()[t].expected_latent_reward == full.logs()[t].expected_latent_reward);
    }
  }

  TEST_CASE("a checkpoint from another config is refused") {
    auto other = quick_config(99);
    OracleFeedback source(other.oracle, TrialStreams(other.seed).feedback());
    CHECK_THROWS_AS(LearningTrial::resume(other, source, finished().trial.checkpoint()), Error);
    CHECK_THROWS_AS(LearningTrial::resume(other, source, "{not json"), Error);
  }

  TEST_CASE("expected oracle reward uses common random numbers") {
    const auto& f = finished();
    const double a = expected_oracle_reward(f.trial.policy(), f.cfg, f.trial.streams(), 40);
    const double b = expected_oracle_reward(f.trial.policy(), f.cfg, f.trial.streams(), 40);
    CHECK(a == b);
    CHECK(a >= 1.0);
    CHECK(a <= 10.0);
    CHECK_THROWS_AS(expected_oracle_reward(f.trial.policy(), f.cfg, f.trial.streams(), 0), Error);
  }
}

TEST_SUITE("trial config") {
  TEST_CASE("defaults round-trip through JSON") {
    const TrialConfig cfg;
    const std::string text = dump_trial_config(cfg);
    CHECK(dump_trial_config(parse_trial_config(text)) == text);
    CHECK(parse_trial_config("{}").epsilon == 0.75);
  }

  TEST_CASE("partial configs keep defaults elsewhere") {
    const auto cfg = parse_trial_config(R"({"seed": 4, "context": {"hi": 0.8}, "feedback_source": "interactive"})");
    CHECK(cfg.seed == 4);
    CHECK(cfg.contexts.hi == 0.8);
    CHECK(cfg.contexts.lo == 0.1);
    CHECK(cfg.feedback == FeedbackMode::Interactive);
    CHECK(cfg.batch_size == 10);
  }

  TEST_CASE("errors name the offending field") {
    CHECK(config_error_field(R"({"epsilo": 1})") == "epsilo");
    CHECK(config_error_field(R"({"epsilon": -1})") == "epsilon");
    CHECK(config_error_field(R"({"batch_size": "ten"})") == "batch_size");
    CHECK(config_error_field(R"({"batch_size": 2.5})") == "batch_size");
    CHECK(config_error_field(R"({"sim": {"human": {"stiffness": "x"}}})") == "sim.human.stiffness");
    CHECK(config_error_field(R"({"oracle": {"sigma_r": 0}})") == "oracle.sigma_r");
    CHECK(config_error_field(R"({"bounds": {"lo": [1, 2]}})") == "bounds.lo");
    CHECK(config_error_field(R"({"feedback_source": "human"})") == "feedback_source");
    CHECK(config_error_field(R"({"first_batch": 5})") == "first_batch");
    CHECK(config_error_field(R"({"context": {"lo": 0.5, "hi": 0.2}})") == "context");
    CHECK(config_error_field(R"({"version": 2})") == "version");
  }

  TEST_CASE("malformed JSON reports line and column") {
    try {
      parse_trial_config("{\n  \"seed\" 3\n}");
      FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field() == "<root>");
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }

  TEST_CASE("total experiments") {
    TrialConfig cfg;
    CHECK(cfg.total_experiments() == 130);
    CHECK(cfg.batch_size_for(1) == 40);
    CHECK(cfg.batch_size_for(2) == 10);
  }
}
