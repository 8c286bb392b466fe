#include "loop/analysis.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "core/error.hpp"
#include "core/parallel.hpp"
#include "loop/learn_loop.hpp"
#include "loop/trial_io.hpp"
#include "oracle/feedback_oracle.hpp"

namespace handover {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kEvalStream = 6;

}  // namespace

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  if (values.empty()) return r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  if (values.size() < 2) return r;
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return r;
}

std::vector<EvalRow> evaluate_policy(const GaussianContextualPolicy& policy, const TrialConfig& cfg,
                                     std::span<const double> contexts, const EvalOptions& options) {
  std::vector<EvalRow> rows;
  if (options.rollouts <= 0) return rows;
  const RandomSource root = seeded_rng(cfg.seed).derive(kEvalStream);
  const auto n = static_cast<std::size_t>(options.rollouts);
  for (std::size_t k = 0; k < contexts.size(); ++k) {
    const Context s(contexts[k]);
    const Eigen::VectorXd mean = policy.mean_at(s.features());
    const ControllerParams mean_params =
        clamp_params(std::span<const double>(mean.data(), kParamDim), cfg.bounds);

    std::vector<double> duration(n), force(n), jerk(n), reward(n), success(n);
    parallel_for(n, [&](std::size_t i) {
      RandomSource rng = root.derive(k).derive(i);
      const ControllerParams a = options.sample ? sample_action(policy, s, rng, cfg.bounds) : mean_params;
      const auto result = run_experiment(a, s, cfg, rng.derive(0));
      const auto& m = result.outcome.metrics;
      duration[i] = m.duration;
      force[i] = m.peak_force;
      jerk[i] = m.peak_jerk;
      success[i] = m.success ? 1.0 : 0.0;
      reward[i] = ground_truth_reward(m, s, cfg.oracle);
    });

    EvalRow row;
    row.hand_speed = s.hand_speed();
    row.rollouts = options.rollouts;
    row.stiffness_y = mean_params.trans_stiffness_y;
    row.success_rate = mean_std(success).mean;
    row.duration = mean_std(duration);
    row.peak_force = mean_std(force);
    row.peak_jerk = mean_std(jerk);
    row.reward = mean_std(reward);
    rows.push_back(row);
  }
  return rows;
}

void write_eval_table(std::ostream& out, std::span<const EvalRow> rows) {
  out << "hand_speed_mps\trollouts\tstiffness_y_Npm\tsuccess_rate\tduration_mean_s\tduration_std_s"
         "\tpeak_force_mean_N\tpeak_force_std_N\tpeak_jerk_mean_mps3\tpeak_jerk_std_mps3"
         "\treward_mean\treward_std\n";
  const auto flags = out.flags();
  out << std::fixed;
  for (const auto& r : rows) {
    out << std::setprecision(3) << r.hand_speed << '\t' << r.rollouts << '\t' << std::setprecision(2)
        << r.stiffness_y << '\t' << std::setprecision(3) << r.success_rate << '\t'
        << std::setprecision(4) << r.duration.mean << '\t' << r.duration.std << '\t'
        << std::setprecision(3) << r.peak_force.mean << '\t' << r.peak_force.std << '\t'
        << std::setprecision(2) << r.peak_jerk.mean << '\t' << r.peak_jerk.std << '\t'
        << std::setprecision(4) << r.reward.mean << '\t' << r.reward.std << '\n';
  }
  out.flags(flags);
}

namespace {

struct Band {
  double mean, lo, hi;
};

Band band95(const std::vector<double>& v) {
  const MeanStd ms = mean_std(v);
  const double half = v.size() < 2 ? 0.0 : 1.96 * ms.std / std::sqrt(static_cast<double>(v.size()));
  return {ms.mean, ms.mean - half, ms.mean + half};
}

}  // namespace

CurveExport aggregate_curves(std::span<const fs::path> trial_dirs) {
  if (trial_dirs.empty()) fail(ErrorCode::InvalidArgument, "no trial directories given");
  CurveExport result;
  struct Acc {
    std::vector<double> latent, oracle;
    std::vector<int> experiments;
  };
  std::map<int, Acc> by_update;
  int horizon = 0;

  for (const auto& dir : trial_dirs) {
    const TrialConfig cfg = load_trial_config((dir / "config.json").string());
    horizon = std::max(horizon, cfg.updates);
    std::istringstream in(read_file(dir / "log.jsonl"));
    std::string line;
    int seen = 0;
    int expected = 1;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error&) {
        result.warnings.push_back(dir.string() + ": log.jsonl line " + std::to_string(lineno) +
                                  " is not valid JSON; stopped reading this trial");
        break;
      }
      const int update = j.at("update").get<int>();
      if (update != expected) {
        result.warnings.push_back(dir.string() + ": update " + std::to_string(expected) +
                                  " missing from log.jsonl");
      }
      expected = update + 1;
      Acc& acc = by_update[update];
      acc.latent.push_back(j.at("expected_latent_reward").get<double>());
      if (!j.at("expected_oracle_reward").is_null()) {
        acc.oracle.push_back(j.at("expected_oracle_reward").get<double>());
      }
      acc.experiments.push_back(j.at("experiments").get<int>());
      ++seen;
    }
    if (seen < cfg.updates) {
      result.warnings.push_back(dir.string() + ": " + std::to_string(seen) + " of " +
                                std::to_string(cfg.updates) + " iterations logged; export is partial");
    }
  }

  for (const auto& [update, acc] : by_update) {
    if (update < 1 || update > horizon) continue;
    CurveRow row;
    row.update = update;
    row.trials = static_cast<int>(acc.latent.size());
    row.experiments = acc.experiments.front();
    for (int e : acc.experiments) {
      if (e != row.experiments) {
        result.warnings.push_back("update " + std::to_string(update) +
                                  ": trials disagree on the experiment count");
        break;
      }
    }
    const Band l = band95(acc.latent);
    row.latent_mean = l.mean;
    row.latent_lo = l.lo;
    row.latent_hi = l.hi;
    if (!acc.oracle.empty()) {
      const Band o = band95(acc.oracle);
      row.oracle_mean = o.mean;
      row.oracle_lo = o.lo;
      row.oracle_hi = o.hi;
    }
    result.rows.push_back(row);
  }
  return result;
}

void write_curve(std::ostream& out, const CurveExport& curve) {
  out << "update\texperiments\ttrials\tlatent_mean\tlatent_lo95\tlatent_hi95"
         "\toracle_mean\toracle_lo95\toracle_hi95\n";
  const auto flags = out.flags();
  out << std::setprecision(10);
  auto opt = [&](const std::optional<double>& v) {
    if (v) {
      out << *v;
    } else {
      out << "nan";
    }
  };
  for (const auto& r : curve.rows) {
    out << r.update << '\t' << r.experiments << '\t' << r.trials << '\t' << r.latent_mean << '\t'
        << r.latent_lo << '\t' << r.latent_hi << '\t';
    opt(r.oracle_mean);
    out << '\t';
    opt(r.oracle_lo);
    out << '\t';
    opt(r.oracle_hi);
    out << '\n';
  }
  out.flags(flags);
}

}  // namespace handover
