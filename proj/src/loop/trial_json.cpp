#include "loop/trial_json.hpp"

#include <cstdio>

#include "core/error.hpp"

namespace handover {

using nlohmann::json;

json params_json(const ControllerParams& p) {
  json j = json::object();
  const auto a = p.to_array();
  for (std::size_t i = 0; i < kParamDim; ++i) j[param_name(static_cast<Param>(i))] = a[i];
  return j;
}

ControllerParams params_from_json(const json& j) {
  std::array<double, kParamDim> a{};
  for (std::size_t i = 0; i < kParamDim; ++i) a[i] = j.at(param_name(static_cast<Param>(i))).get<double>();
  return ControllerParams{a[0], a[1], a[2], a[3], a[4], a[5], a[6]};
}

json feedback_json(const FeedbackEvent& e) {
  if (e.is_absolute()) {
    const auto& a = e.as_absolute();
    return {{"kind", "absolute"}, {"id", a.sample_id}, {"value", a.value}};
  }
  const auto& p = e.as_preference();
  return {{"kind", "preference"}, {"winner", p.winner_id}, {"loser", p.loser_id}};
}

FeedbackEvent feedback_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "absolute") {
    return FeedbackEvent::absolute(j.at("id").get<ExperimentId>(), j.at("value").get<double>());
  }
  if (kind == "preference") {
    return FeedbackEvent::preference(j.at("winner").get<ExperimentId>(),
                                     j.at("loser").get<ExperimentId>());
  }
  fail(ErrorCode::InvalidArgument, "feedback kind must be \"absolute\" or \"preference\"");
}

json metrics_json(const HandoverMetrics& m) {
  return {{"success", m.success},
          {"duration_s", m.duration},
          {"peak_force_N", m.peak_force},
          {"peak_jerk_mps3", m.peak_jerk}};
}

json record_json(const ExperimentRecord& r, const ExperimentOutcome& o) {
  json j = {{"id", r.id},
            {"hand_speed", r.context.hand_speed()},
            {"params", params_json(r.params)},
            {"metrics", metrics_json(o.metrics)},
            {"diverged", o.diverged},
            {"feedback", r.feedback}};
  j["oracle_reward"] = o.oracle_reward ? json(*o.oracle_reward) : json(nullptr);
  j["latent_reward"] = r.latent_reward ? json(*r.latent_reward) : json(nullptr);
  return j;
}

void record_from_json(const json& j, ExperimentRecord& r, ExperimentOutcome& o) {
  r.id = j.at("id").get<ExperimentId>();
  r.context = Context(j.at("hand_speed").get<double>());
  r.params = params_from_json(j.at("params"));
  r.feedback = j.at("feedback").get<std::vector<std::size_t>>();
  r.latent_reward.reset();
  if (!j.at("latent_reward").is_null()) r.latent_reward = j.at("latent_reward").get<double>();
  const auto& m = j.at("metrics");
  o.metrics.success = m.at("success").get<bool>();
  o.metrics.duration = m.at("duration_s").get<double>();
  o.metrics.peak_force = m.at("peak_force_N").get<double>();
  o.metrics.peak_jerk = m.at("peak_jerk_mps3").get<double>();
  o.diverged = j.at("diverged").get<bool>();
  o.oracle_reward.reset();
  if (!j.at("oracle_reward").is_null()) o.oracle_reward = j.at("oracle_reward").get<double>();
}

json policy_summary_json(const GaussianContextualPolicy& policy) {
  const Eigen::VectorXd sd = policy.std_devs();
  json params = json::array();
  for (std::size_t i = 0; i < kParamDim; ++i) {
    const auto p = static_cast<Param>(i);
    const auto k = static_cast<Eigen::Index>(i);
    params.push_back({{"name", param_name(p)},
                      {"unit", param_unit(p)},
                      {"offset", policy.mean_offset()(k)},
                      {"gain", policy.gain()(k, 0)},
                      {"std", sd(k)}});
  }
  return {{"fingerprint", fingerprint_hex(policy.fingerprint())},
          {"parameters", params},
          {"snapshot", policy.snapshot()}};
}

json trace_json(const RolloutTrace& trace, double lead, std::size_t stride) {
  if (stride == 0) stride = 1;
  std::size_t first = 0;
  if (trace.contact_time) {
    while (first < trace.size() && trace.time[first] < *trace.contact_time - lead) ++first;
  }
  std::vector<double> cols[16];
  for (std::size_t k = first; k < trace.size(); k += stride) {
    cols[0].push_back(trace.time[k]);
    for (int a = 0; a < 3; ++a) {
      cols[1 + a].push_back(trace.ee_pos[k](a));
      cols[4 + a].push_back(trace.ee_vel[k](a));
      cols[7 + a].push_back(trace.hand_pos[k](a));
      cols[10 + a].push_back(trace.force[k](a));
    }
    cols[13].push_back(trace.torque[k]);
    cols[14].push_back(trace.aperture[k]);
    cols[15].push_back(trace.load[k]);
  }
  static const char* names[16] = {"t_s",       "ee_x_m",    "ee_y_m",    "ee_z_m",   "ee_vx_mps", "ee_vy_mps",
                                  "ee_vz_mps", "hand_x_m",  "hand_y_m",  "hand_z_m", "force_x_N", "force_y_N",
                                  "force_z_N", "torque_Nm", "aperture_mm", "load_N"};
  json columns = json::object();
  for (int c = 0; c < 16; ++c) columns[names[c]] = cols[c];
  json j = {{"dt", trace.dt * static_cast<double>(stride)}, {"columns", columns}};
  j["contact_time"] = trace.contact_time ? json(*trace.contact_time) : json(nullptr);
  j["release_time"] = trace.release_time ? json(*trace.release_time) : json(nullptr);
  return j;
}

std::string fingerprint_hex(std::uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

std::uint64_t fingerprint_from_hex(const std::string& hex) {
  return std::stoull(hex, nullptr, 16);
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> number_or_null(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

json iteration_json(const IterationLog& log) {
  char snapshot[32];
  std::snprintf(snapshot, sizeof snapshot, "policies/policy_%03d.txt", log.update);
  return {{"update", log.update},
          {"experiments", log.experiments},
          {"batch", {log.first_id, log.last_id}},
          {"expected_latent_reward", log.expected_latent_reward},
          {"expected_oracle_reward", optional_number(log.expected_oracle_reward)},
          {"batch_oracle_reward", optional_number(log.batch_oracle_reward)},
          {"policy_in", fingerprint_hex(log.policy_in)},
          {"policy_out", fingerprint_hex(log.policy_out)},
          {"policy_snapshot", snapshot},
          {"hyper",
           {{"reselected", log.reselected},
            {"evidence", log.evidence},
            {"fallback", log.hyper_fallback},
            {"signal_var", log.signal_var},
            {"lengthscales", log.lengthscales},
            {"sigma_p", log.sigma_p},
            {"sigma_r", log.sigma_r}}},
          {"solver_failed", log.solver_failed},
          {"dual", {{"eta", log.eta}, {"kl", log.kl}, {"fallback", log.dual_fallback}}},
          {"gain_kept", log.gain_kept},
          {"diverged", log.diverged}};
}

IterationLog iteration_from_json(const json& j) {
  IterationLog log;
  log.update = j.at("update").get<int>();
  log.experiments = j.at("experiments").get<int>();
  log.first_id = j.at("batch").at(0).get<ExperimentId>();
  log.last_id = j.at("batch").at(1).get<ExperimentId>();
  log.expected_latent_reward = j.at("expected_latent_reward").get<double>();
  log.expected_oracle_reward = number_or_null(j.at("expected_oracle_reward"));
  log.batch_oracle_reward = number_or_null(j.at("batch_oracle_reward"));
  log.policy_in = fingerprint_from_hex(j.at("policy_in").get<std::string>());
  log.policy_out = fingerprint_from_hex(j.at("policy_out").get<std::string>());
  const auto& h = j.at("hyper");
  log.reselected = h.at("reselected").get<bool>();
  log.evidence = h.at("evidence").get<double>();
  log.hyper_fallback = h.at("fallback").get<bool>();
  log.signal_var = h.at("signal_var").get<double>();
  log.lengthscales = h.at("lengthscales").get<std::vector<double>>();
  log.sigma_p = h.at("sigma_p").get<double>();
  log.sigma_r = h.at("sigma_r").get<double>();
  log.solver_failed = j.at("solver_failed").get<bool>();
  log.eta = j.at("dual").at("eta").get<double>();
  log.kl = j.at("dual").at("kl").get<double>();
  log.dual_fallback = j.at("dual").at("fallback").get<bool>();
  log.gain_kept = j.at("gain_kept").get<bool>();
  log.diverged = j.at("diverged").get<int>();
  return log;
}

json timing_json(const IterationTiming& t) {
  return {{"update", t.update},
          {"collect_s", t.collect_s},
          {"fit_s", t.fit_s},
          {"predict_s", t.predict_s},
          {"update_s", t.update_s},
          {"eval_s", t.eval_s}};
}

}  // namespace handover
