#include "loop/trial_config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "core/error.hpp"

namespace handover {

using nlohmann::json;

namespace {

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  void read(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ConfigError(join(path_, key), "expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError(join(path_, key), "must be finite");
    }
  }

  void read(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) throw ConfigError(join(path_, key), "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < -1'000'000'000 || x > 1'000'000'000) {
        throw ConfigError(join(path_, key), "integer out of range");
      }
      out = static_cast<int>(x);
    }
  }

  void read(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) {
        throw ConfigError(join(path_, key), "expected a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }

  void read(const char* key, std::array<double, kParamDim>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array() || v->size() != kParamDim) {
        throw ConfigError(join(path_, key), "expected an array of 7 numbers");
      }
      for (std::size_t i = 0; i < kParamDim; ++i) {
        if (!(*v)[i].is_number()) throw ConfigError(join(path_, key), "expected an array of 7 numbers");
        out[i] = (*v)[i].get<double>();
      }
    }
  }

  void read(const char* key, FeedbackMode& out) {
    if (const json* v = take(key)) {
      const std::string s = v->is_string() ? v->get<std::string>() : std::string();
      if (s == "oracle") out = FeedbackMode::Oracle;
      else if (s == "interactive") out = FeedbackMode::Interactive;
      else throw ConfigError(join(path_, key), "expected \"oracle\" or \"interactive\"");
    }
  }

  template <typename Fn>
  void object(const char* key, Fn&& fn) {
    if (const json* v = take(key)) {
      ObjectReader sub(*v, join(path_, key));
      fn(sub);
      sub.finish();
    }
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(join(path_, item.key()), "unknown key");
    }
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_human(ObjectReader& r, HumanProfile& h) {
  r.read("start_distance", h.start_distance);
  r.read("approach_elevation", h.approach_elevation);
  r.read("stiffness", h.stiffness);
  r.read("damping", h.damping);
  r.read("settle_time", h.settle_time);
  r.read("grasp_time", h.grasp_time);
  r.read("pull_ramp_rate", h.pull_ramp_rate);
  r.read("pull_speed_gain", h.pull_speed_gain);
  r.read("ramp_jitter", h.ramp_jitter);
  r.read("support_share", h.support_share);
  r.read("wrist_stiffness", h.wrist_stiffness);
  r.read("wrist_damping", h.wrist_damping);
  r.read("orientation_offset", h.orientation_offset);
}

void read_sim(ObjectReader& r, SimConfig& s) {
  r.read("ee_mass", s.ee_mass);
  r.read("rot_inertia", s.rot_inertia);
  r.read("object_weight", s.object_weight);
  r.read("dt", s.dt);
  r.read("horizon", s.horizon);
  r.read("plan_speed", s.plan_speed);
  r.read("stop_time", s.stop_time);
  r.read("contact_distance", s.contact_distance);
  r.read("prediction_window", s.prediction_window);
  r.read("finger_closed", s.finger_closed);
  r.read("finger_open", s.finger_open);
  r.read("finger_gain", s.finger_gain);
  r.read("lever_arm", s.lever_arm);
  r.read("jerk_filter_time", s.jerk_filter_time);
  r.read("post_release_tail", s.post_release_tail);
  r.read("max_approach_time", s.max_approach_time);
  r.object("human", [&](ObjectReader& h) { read_human(h, s.human); });
}

void read_oracle(ObjectReader& r, OracleConfig& o) {
  r.read("w_fail", o.w_fail);
  r.read("w_duration", o.w_duration);
  r.read("w_force", o.w_force);
  r.read("w_jerk", o.w_jerk);
  r.read("force_scale", o.force_scale);
  r.read("jerk_scale", o.jerk_scale);
  r.read("duration_lo", o.duration_lo);
  r.read("duration_hi", o.duration_hi);
  r.read("late_speed_weight", o.late_speed_weight);
  r.read("sigma_p", o.sigma_p);
  r.read("sigma_r", o.sigma_r);
  r.read("abs_threshold", o.abs_threshold);
}

json human_json(const HumanProfile& h) {
  return {{"start_distance", h.start_distance},
          {"approach_elevation", h.approach_elevation},
          {"stiffness", h.stiffness},
          {"damping", h.damping},
          {"settle_time", h.settle_time},
          {"grasp_time", h.grasp_time},
          {"pull_ramp_rate", h.pull_ramp_rate},
          {"pull_speed_gain", h.pull_speed_gain},
          {"ramp_jitter", h.ramp_jitter},
          {"support_share", h.support_share},
          {"wrist_stiffness", h.wrist_stiffness},
          {"wrist_damping", h.wrist_damping},
          {"orientation_offset", h.orientation_offset}};
}

json sim_json(const SimConfig& s) {
  return {{"ee_mass", s.ee_mass},
          {"rot_inertia", s.rot_inertia},
          {"object_weight", s.object_weight},
          {"dt", s.dt},
          {"horizon", s.horizon},
          {"plan_speed", s.plan_speed},
          {"stop_time", s.stop_time},
          {"contact_distance", s.contact_distance},
          {"prediction_window", s.prediction_window},
          {"finger_closed", s.finger_closed},
          {"finger_open", s.finger_open},
          {"finger_gain", s.finger_gain},
          {"lever_arm", s.lever_arm},
          {"jerk_filter_time", s.jerk_filter_time},
          {"post_release_tail", s.post_release_tail},
          {"max_approach_time", s.max_approach_time},
          {"human", human_json(s.human)}};
}

json oracle_json(const OracleConfig& o) {
  return {{"w_fail", o.w_fail},
          {"w_duration", o.w_duration},
          {"w_force", o.w_force},
          {"w_jerk", o.w_jerk},
          {"force_scale", o.force_scale},
          {"jerk_scale", o.jerk_scale},
          {"duration_lo", o.duration_lo},
          {"duration_hi", o.duration_hi},
          {"late_speed_weight", o.late_speed_weight},
          {"sigma_p", o.sigma_p},
          {"sigma_r", o.sigma_r},
          {"abs_threshold", o.abs_threshold}};
}

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw ConfigError(field, what);
}

}  // namespace

const char* to_string(FeedbackMode mode) noexcept {
  return mode == FeedbackMode::Oracle ? "oracle" : "interactive";
}

HyperCandidate RewardModelConfig::defaults() const {
  return {KernelHyper::isotropic(signal_var, lengthscale, static_cast<Eigen::Index>(kJointDim)),
          NoiseTerms{sigma_p, sigma_r}};
}

void TrialConfig::validate() const {
  require(version == kTrialConfigVersion, "version", "unsupported config version");
  require(std::isfinite(epsilon) && epsilon > 0.0, "epsilon", "must be positive");
  require(batch_size > 0, "batch_size", "must be positive");
  require(first_batch > 0, "first_batch", "must be positive");
  require(first_batch >= batch_size, "first_batch", "must be at least batch_size");
  require(artificial_samples >= 2, "artificial_samples", "must be at least 2");
  require(updates > 0, "updates", "must be positive");
  require(eval_rollouts >= 0, "eval_rollouts", "must be non-negative");
  require(std::isfinite(stall_timeout) && stall_timeout > 0.0, "stall_timeout", "must be positive");
  require(std::isfinite(contexts.lo) && std::isfinite(contexts.hi) && contexts.lo > 0.0 &&
              contexts.lo < contexts.hi,
          "context", "needs 0 < lo < hi");
  for (std::size_t i = 0; i < kParamDim; ++i) {
    require(std::isfinite(bounds.lo[i]) && std::isfinite(bounds.hi[i]) && bounds.lo[i] < bounds.hi[i],
            "bounds", "needs lo < hi for every parameter");
  }
  for (std::size_t i = 0; i < 5; ++i) {
    require(bounds.lo[i] >= 0.0, "bounds.lo", "stiffness and slope bounds must be non-negative");
  }
  require(bounds.lo[5] > 0.0, "bounds.lo", "d_min bound must be positive");
  for (std::size_t i = 0; i < kParamDim; ++i) {
    require(std::isfinite(initial_policy.mean[i]), "initial_policy.mean", "must be finite");
    require(std::isfinite(initial_policy.variance[i]) && initial_policy.variance[i] > 0.0,
            "initial_policy.variance", "must be positive");
  }
  require(std::isfinite(reward.signal_var) && reward.signal_var > 0.0, "reward.signal_var",
          "must be positive");
  require(std::isfinite(reward.lengthscale) && reward.lengthscale > 0.0, "reward.lengthscale",
          "must be positive");
  require(std::isfinite(reward.sigma_p) && reward.sigma_p > 0.0, "reward.sigma_p", "must be positive");
  require(std::isfinite(reward.sigma_r) && reward.sigma_r > 0.0, "reward.sigma_r", "must be positive");
  require(reward.reselect_every >= 0, "reward.reselect_every", "must be non-negative");
  sim.validate();
  oracle.validate();
}

TrialConfig parse_trial_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    // e.byte is 1-based and points just past the offending character.
    const std::size_t end = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, json_text.size());
    std::size_t line = 1;
    std::size_t column = 1;
    for (std::size_t i = 0; i < end; ++i) {
      if (json_text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    std::ostringstream msg;
    msg << "malformed JSON at line " << line << ", column " << column;
    throw ConfigError("<root>", msg.str());
  }
  TrialConfig cfg;
  ObjectReader r(root, "");
  r.read("version", cfg.version);
  if (cfg.version != kTrialConfigVersion) throw ConfigError("version", "unsupported config version");
  r.read("seed", cfg.seed);
  r.read("epsilon", cfg.epsilon);
  r.read("batch_size", cfg.batch_size);
  r.read("first_batch", cfg.first_batch);
  r.read("artificial_samples", cfg.artificial_samples);
  r.read("updates", cfg.updates);
  r.read("eval_rollouts", cfg.eval_rollouts);
  r.read("feedback_source", cfg.feedback);
  r.read("stall_timeout", cfg.stall_timeout);
  r.object("context", [&](ObjectReader& c) {
    c.read("lo", cfg.contexts.lo);
    c.read("hi", cfg.contexts.hi);
  });
  r.object("initial_policy", [&](ObjectReader& p) {
    p.read("mean", cfg.initial_policy.mean);
    p.read("variance", cfg.initial_policy.variance);
  });
  r.object("bounds", [&](ObjectReader& b) {
    b.read("lo", cfg.bounds.lo);
    b.read("hi", cfg.bounds.hi);
  });
  r.object("reward", [&](ObjectReader& m) {
    m.read("signal_var", cfg.reward.signal_var);
    m.read("lengthscale", cfg.reward.lengthscale);
    m.read("sigma_p", cfg.reward.sigma_p);
    m.read("sigma_r", cfg.reward.sigma_r);
    m.read("reselect_every", cfg.reward.reselect_every);
  });
  r.object("sim", [&](ObjectReader& s) { read_sim(s, cfg.sim); });
  r.object("oracle", [&](ObjectReader& o) { read_oracle(o, cfg.oracle); });
  r.finish();
  cfg.validate();
  return cfg;
}

TrialConfig load_trial_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_trial_config(text.str());
}

std::string dump_trial_config(const TrialConfig& cfg) {
  json j = {{"version", cfg.version},
            {"seed", cfg.seed},
            {"epsilon", cfg.epsilon},
            {"batch_size", cfg.batch_size},
            {"first_batch", cfg.first_batch},
            {"artificial_samples", cfg.artificial_samples},
            {"updates", cfg.updates},
            {"eval_rollouts", cfg.eval_rollouts},
            {"feedback_source", to_string(cfg.feedback)},
            {"stall_timeout", cfg.stall_timeout},
            {"context", {{"lo", cfg.contexts.lo}, {"hi", cfg.contexts.hi}}},
            {"initial_policy",
             {{"mean", cfg.initial_policy.mean}, {"variance", cfg.initial_policy.variance}}},
            {"bounds", {{"lo", cfg.bounds.lo}, {"hi", cfg.bounds.hi}}},
            {"reward",
             {{"signal_var", cfg.reward.signal_var},
              {"lengthscale", cfg.reward.lengthscale},
              {"sigma_p", cfg.reward.sigma_p},
              {"sigma_r", cfg.reward.sigma_r},
              {"reselect_every", cfg.reward.reselect_every}}},
            {"sim", sim_json(cfg.sim)},
            {"oracle", oracle_json(cfg.oracle)}};
  return j.dump(2) + "\n";
}

}  // namespace handover
