#include "handover/handover.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/error.hpp"
#include "loop/analysis.hpp"
#include "loop/learn_loop.hpp"
#include "loop/trial_io.hpp"
#include "loop/trial_json.hpp"
#include "service/http_server.hpp"
#include "service/router.hpp"
#include "service/session.hpp"

struct ho_config {
  handover::TrialConfig cfg;
};

struct ho_trial {
  explicit ho_trial(const handover::TrialConfig& c)
      : streams(c.seed), oracle(c.oracle, streams.feedback()), trial(c, oracle) {}

  handover::TrialStreams streams;
  handover::OracleFeedback oracle;
  handover::LearningTrial trial;
};

struct ho_server {
  explicit ho_server(handover::SessionManagerOptions options)
      : sessions(std::move(options)), router(sessions), http(sessions) {}

  handover::SessionManager sessions;
  handover::Router router;
  handover::HttpServer http;
};

namespace {

thread_local std::string last_error;
thread_local std::string last_field;

ho_status set_error(ho_status status, const std::string& message, const std::string& field = {}) {
  last_error = message;
  last_field = field;
  return status;
}

ho_status status_for(handover::ErrorCode code) {
  using handover::ErrorCode;
  switch (code) {
    case ErrorCode::Config: return HO_ERR_CONFIG;
    case ErrorCode::InvalidArgument: return HO_ERR_INVALID_ARGUMENT;
    case ErrorCode::NotFound: return HO_ERR_NOT_FOUND;
    case ErrorCode::Io: return HO_ERR_IO;
    case ErrorCode::Conflict: return HO_ERR_CONFLICT;
    default: return HO_ERR_RUNTIME;
  }
}

// Runs fn, translating exceptions into status codes and the thread-local
// error message.
template <typename Fn>
ho_status guarded(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    last_field.clear();
    return HO_OK;
  } catch (const handover::ConfigError& e) {
    return set_error(HO_ERR_CONFIG, e.what(), e.field());
  } catch (const handover::Error& e) {
    return set_error(status_for(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(HO_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return set_error(HO_ERR_RUNTIME, e.what());
  } catch (...) {
    return set_error(HO_ERR_RUNTIME, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

void require(bool ok, const char* what) {
  if (!ok) handover::fail(handover::ErrorCode::InvalidArgument, what);
}

}  // namespace

extern "C" {

const char* ho_version(void) { return "1.0.0"; }

const char* ho_last_error(void) { return last_error.c_str(); }

const char* ho_last_error_field(void) { return last_field.c_str(); }

void ho_free(char* s) { std::free(s); }

ho_status ho_default_output_root(char** path) {
  return guarded([&] {
    require(path, "path must not be NULL");
    *path = dup_string(handover::default_output_root().string());
  });
}

ho_status ho_config_default(ho_config** out) {
  return guarded([&] {
    require(out, "out must not be NULL");
    *out = new ho_config{};
  });
}

ho_status ho_config_load(const char* path, ho_config** out) {
  return guarded([&] {
    require(path && out, "path and out must not be NULL");
    auto c = std::make_unique<ho_config>();
    c->cfg = handover::load_trial_config(path);
    c->cfg.validate();
    *out = c.release();
  });
}

ho_status ho_config_parse(const char* json, ho_config** out) {
  return guarded([&] {
    require(json && out, "json and out must not be NULL");
    auto c = std::make_unique<ho_config>();
    c->cfg = handover::parse_trial_config(json);
    c->cfg.validate();
    *out = c.release();
  });
}

ho_status ho_config_set_seed(ho_config* cfg, uint64_t seed) {
  return guarded([&] {
    require(cfg, "cfg must not be NULL");
    cfg->cfg.seed = seed;
  });
}

ho_status ho_config_seed(const ho_config* cfg, uint64_t* seed) {
  return guarded([&] {
    require(cfg && seed, "cfg and seed must not be NULL");
    *seed = cfg->cfg.seed;
  });
}

ho_status ho_config_to_json(const ho_config* cfg, char** json) {
  return guarded([&] {
    require(cfg && json, "cfg and json must not be NULL");
    *json = dup_string(handover::dump_trial_config(cfg->cfg));
  });
}

void ho_config_free(ho_config* cfg) { delete cfg; }

ho_status ho_run(const ho_config* cfg, const char* out_root, char** trial_dir, char** summary_json) {
  return guarded([&] {
    require(cfg, "cfg must not be NULL");
    cfg->cfg.validate();
    if (cfg->cfg.feedback != handover::FeedbackMode::Oracle) {
      throw handover::ConfigError("feedback_source",
                                  "run needs the oracle feedback source; use serve for interactive trials");
    }
    const std::filesystem::path root = out_root && *out_root ? std::filesystem::path(out_root)
                                                             : handover::default_output_root();
    const auto dir = handover::allocate_directory(root, handover::trial_directory_name(cfg->cfg.seed));
    // The directory exists before the trial runs, so report it even when
    // the trial aborts and leaves partial logs.
    put(trial_dir, dir.string());
    const auto summary = handover::run_trial(cfg->cfg, dir);
    put(summary_json, handover::summary_json(summary).dump());
  });
}

ho_status ho_trial_create(const ho_config* cfg, ho_trial** out) {
  return guarded([&] {
    require(cfg && out, "cfg and out must not be NULL");
    if (cfg->cfg.feedback != handover::FeedbackMode::Oracle) {
      throw handover::ConfigError("feedback_source", "step-wise trials need the oracle feedback source");
    }
    *out = new ho_trial(cfg->cfg);
  });
}

int ho_trial_done(const ho_trial* trial) { return trial && trial->trial.done() ? 1 : 0; }

ho_status ho_trial_step(ho_trial* trial, char** log_json) {
  return guarded([&] {
    require(trial, "trial must not be NULL");
    const auto& log = trial->trial.step();
    put(log_json, handover::iteration_json(log).dump());
  });
}

ho_status ho_trial_policy(const ho_trial* trial, char** snapshot) {
  return guarded([&] {
    require(trial && snapshot, "trial and snapshot must not be NULL");
    *snapshot = dup_string(trial->trial.policy().snapshot());
  });
}

void ho_trial_free(ho_trial* trial) { delete trial; }

ho_status ho_replay(const char* trial_dir, int* identical, char** report_json) {
  return guarded([&] {
    require(trial_dir, "trial_dir must not be NULL");
    const auto report = handover::replay_trial(trial_dir);
    if (identical) *identical = report.identical ? 1 : 0;
    nlohmann::json j = {{"identical", report.identical},
                        {"compared", report.compared},
                        {"differing", report.differing}};
    j["error"] = report.error ? nlohmann::json(*report.error) : nlohmann::json(nullptr);
    put(report_json, j.dump());
  });
}

ho_status ho_export_curve(const char* const* trial_dirs, size_t n, char** table, char** warnings_json) {
  return guarded([&] {
    require(trial_dirs || n == 0, "trial_dirs must not be NULL");
    std::vector<std::filesystem::path> dirs;
    for (size_t i = 0; i < n; ++i) {
      require(trial_dirs[i], "trial directory must not be NULL");
      dirs.emplace_back(trial_dirs[i]);
    }
    const auto curve = handover::aggregate_curves(dirs);
    std::ostringstream out;
    handover::write_curve(out, curve);
    put(table, out.str());
    put(warnings_json, nlohmann::json(curve.warnings).dump());
  });
}

ho_status ho_eval(const ho_config* cfg, const char* policy_path, const double* contexts, size_t n_contexts,
                  int rollouts, int sample, char** table) {
  return guarded([&] {
    require(cfg && policy_path && table, "cfg, policy_path and table must not be NULL");
    require(contexts || n_contexts == 0, "contexts must not be NULL");
    require(rollouts >= 0, "rollouts must be non-negative");
    const auto policy = handover::GaussianContextualPolicy::from_snapshot(handover::read_file(policy_path));
    handover::EvalOptions options;
    options.rollouts = rollouts;
    options.sample = sample != 0;
    const auto rows = handover::evaluate_policy(policy, cfg->cfg, {contexts, n_contexts}, options);
    std::ostringstream out;
    handover::write_eval_table(out, rows);
    *table = dup_string(out.str());
  });
}

ho_status ho_server_create(const ho_config* base, const char* persist_dir, ho_server** out) {
  return guarded([&] {
    require(out, "out must not be NULL");
    handover::SessionManagerOptions options;
    if (base) options.base_config = base->cfg;
    if (persist_dir && *persist_dir) options.persist_root = std::filesystem::path(persist_dir);
    *out = new ho_server(std::move(options));
  });
}

ho_status ho_server_resume(ho_server* server, size_t* resumed) {
  return guarded([&] {
    require(server, "server must not be NULL");
    const auto ids = server->sessions.resume_all();
    if (resumed) *resumed = ids.size();
  });
}

ho_status ho_server_handle(ho_server* server, const char* method, const char* path, const char* body,
                           int* http_status, char** response) {
  return guarded([&] {
    require(server && method && path && http_status && response,
            "server, method, path, http_status and response must not be NULL");
    const auto r = server->router.handle(method, path, body ? body : "");
    *http_status = r.status;
    *response = dup_string(r.body);
  });
}

ho_status ho_server_bind(ho_server* server, const char* host, int port, int* bound_port) {
  return guarded([&] {
    require(server && host, "server and host must not be NULL");
    require(port >= 0 && port <= 65535, "port must be in [0, 65535]");
    const int bound = server->http.bind(host, port);
    if (bound_port) *bound_port = bound;
  });
}

ho_status ho_server_listen(ho_server* server) {
  return guarded([&] {
    require(server, "server must not be NULL");
    server->http.listen();
  });
}

void ho_server_stop(ho_server* server) {
  if (server) server->http.stop();
}

void ho_server_free(ho_server* server) { delete server; }

}  // extern "C"
