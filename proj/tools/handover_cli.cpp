#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <pthread.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "handover/handover.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CString {
  char* p = nullptr;
  ~CString() { ho_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

struct ConfigHandle {
  ho_config* p = nullptr;
  ~ConfigHandle() { ho_config_free(p); }
};

struct ServerHandle {
  ho_server* p = nullptr;
  ~ServerHandle() { ho_server_free(p); }
};

int report(ho_status status, const std::string& context) {
  std::cerr << "handover: " << context << ": " << ho_last_error();
  const std::string field = ho_last_error_field();
  if (!field.empty() && std::string(ho_last_error()).find(field) == std::string::npos) {
    std::cerr << " (field " << field << ")";
  }
  std::cerr << "\n";
  return status == HO_ERR_CONFIG || status == HO_ERR_INVALID_ARGUMENT ? kExitConfig : kExitRuntime;
}

// Loads --config (or the defaults) and applies --seed.
ho_status load_config(const std::string& path, std::optional<uint64_t> seed, ConfigHandle& out) {
  ho_status s = path.empty() ? ho_config_default(&out.p) : ho_config_load(path.c_str(), &out.p);
  if (s == HO_OK && seed) s = ho_config_set_seed(out.p, *seed);
  return s;
}

bool write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return static_cast<bool>(std::cout);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  return static_cast<bool>(out);
}

std::string format_reward(const nlohmann::json& v) {
  if (!v.is_number()) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v.get<double>());
  return buf;
}

struct RunArgs {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
};

int cmd_run(const RunArgs& a) {
  ConfigHandle cfg;
  if (const auto s = load_config(a.config, a.seed, cfg); s != HO_OK) return report(s, "config");

  CString dir, summary;
  const auto s = ho_run(cfg.p, a.out.empty() ? nullptr : a.out.c_str(), &dir.p, &summary.p);
  if (dir.p) std::cout << dir.str() << "\n";
  if (s != HO_OK) return report(s, "run");

  const auto j = nlohmann::json::parse(summary.str());
  std::cout << j.at("status").get<std::string>() << ": " << j.at("updates").get<int>() << " updates, "
            << j.at("experiments").get<int>() << " experiments, final expected latent reward "
            << format_reward(j.at("final_expected_latent_reward")) << ", final expected oracle reward "
            << format_reward(j.at("final_expected_oracle_reward")) << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string policy;
  std::string config;
  std::vector<double> contexts;
  int rollouts = 100;
  bool sample = false;
  std::optional<uint64_t> seed;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  ConfigHandle cfg;
  if (const auto s = load_config(a.config, a.seed, cfg); s != HO_OK) return report(s, "config");

  std::vector<double> contexts = a.contexts;
  if (contexts.empty()) {
    for (int i = 1; i <= 10; ++i) contexts.push_back(0.1 * i);
  }
  CString table;
  const auto s = ho_eval(cfg.p, a.policy.c_str(), contexts.data(), contexts.size(), a.rollouts, a.sample ? 1 : 0,
                         &table.p);
  if (s != HO_OK) return report(s, "eval");
  if (!write_output(a.out, table.str())) {
    std::cerr << "handover: eval: cannot write " << a.out << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_replay(const std::string& dir) {
  int identical = 0;
  CString report_json;
  const auto s = ho_replay(dir.c_str(), &identical, &report_json.p);
  if (s != HO_OK) return report(s, "replay");

  const auto j = nlohmann::json::parse(report_json.str());
  if (identical) {
    std::cout << "identical: " << j.at("compared").size() << " files match\n";
    return kExitOk;
  }
  std::cout << "differs:";
  for (const auto& f : j.at("differing")) std::cout << " " << f.get<std::string>();
  std::cout << "\n";
  if (j.at("error").is_string()) std::cerr << "handover: replay: " << j.at("error").get<std::string>() << "\n";
  return kExitRuntime;
}

struct ServeArgs {
  std::string bind = "127.0.0.1:8080";
  std::string config;
  std::string out;
  bool no_resume = false;
};

int cmd_serve(const ServeArgs& a) {
  const auto colon = a.bind.rfind(':');
  int port = -1;
  if (colon != std::string::npos) {
    try {
      std::size_t used = 0;
      port = std::stoi(a.bind.substr(colon + 1), &used);
      if (used != a.bind.size() - colon - 1) port = -1;
    } catch (const std::exception&) {
      port = -1;
    }
  }
  if (colon == std::string::npos || colon == 0 || port < 0 || port > 65535) {
    std::cerr << "handover: serve: --bind expects host:port, got '" << a.bind << "'\n";
    return kExitConfig;
  }
  const std::string host = a.bind.substr(0, colon);

  ConfigHandle cfg;
  if (const auto s = load_config(a.config, std::nullopt, cfg); s != HO_OK) return report(s, "config");

  std::string persist = a.out;
  if (persist.empty()) {
    CString root;
    if (const auto s = ho_default_output_root(&root.p); s != HO_OK) return report(s, "serve");
    persist = root.str() + "/sessions";
  }

  // Block the stop signals before any worker thread exists so only the
  // waiter below receives them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  ServerHandle server;
  if (const auto s = ho_server_create(cfg.p, persist.c_str(), &server.p); s != HO_OK) return report(s, "serve");
  if (!a.no_resume) {
    size_t resumed = 0;
    if (const auto s = ho_server_resume(server.p, &resumed); s != HO_OK) return report(s, "resume");
    if (resumed > 0) std::cerr << "resumed " << resumed << " session(s)\n";
  }
  int bound = 0;
  if (const auto s = ho_server_bind(server.p, host.c_str(), port, &bound); s != HO_OK) return report(s, "bind");
  std::cout << "listening on " << host << ":" << bound << ", sessions in " << persist << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&stop_signals, &sig);
    ho_server_stop(server.p);
  });
  const auto s = ho_server_listen(server.p);
  // A stop that did not come from a signal still has to release the waiter.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  if (s != HO_OK) return report(s, "serve");
  return kExitOk;
}

struct ExportArgs {
  std::vector<std::string> trials;
  std::string out;
};

int cmd_export_curve(const ExportArgs& a) {
  std::vector<const char*> dirs;
  for (const auto& t : a.trials) dirs.push_back(t.c_str());
  CString table, warnings;
  const auto s = ho_export_curve(dirs.data(), dirs.size(), &table.p, &warnings.p);
  if (s != HO_OK) return report(s, "export-curve");
  for (const auto& w : nlohmann::json::parse(warnings.str())) {
    std::cerr << "warning: " << w.get<std::string>() << "\n";
  }
  if (!write_output(a.out, table.str())) {
    std::cerr << "handover: export-curve: cannot write " << a.out << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contextual policy search for robot-to-human handover"};
  app.set_version_flag("--version", ho_version());
  app.require_subcommand(1);

  RunArgs run;
  std::uint64_t run_seed = 0;
  auto* run_cmd = app.add_subcommand("run", "Run a learning trial against the simulated rater");
  run_cmd->add_option("--config", run.config, "Trial config (JSON)")->check(CLI::ExistingFile);
  auto* run_seed_opt = run_cmd->add_option("--seed", run_seed, "Override the config seed");
  run_cmd->add_option("--out", run.out, "Output root (default $HANDOVER_OUT_ROOT or ./runs)");

  EvalArgs eval;
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a policy snapshot over a context grid");
  eval_cmd->add_option("--policy", eval.policy, "Policy snapshot")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--config", eval.config, "Trial config supplying simulator and rater settings")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--contexts", eval.contexts, "Hand speeds in m/s (default 0.1..1.0)")
      ->check(CLI::Range(0.0, 10.0));
  eval_cmd->add_option("-n,--rollouts", eval.rollouts, "Rollouts per context")->check(CLI::NonNegativeNumber);
  eval_cmd->add_flag("--sample", eval.sample, "Draw parameters from the policy instead of using its mean");
  auto* eval_seed_opt = eval_cmd->add_option("--seed", eval_seed, "Override the config seed");
  eval_cmd->add_option("--out", eval.out, "Output file (default stdout)");

  std::string replay_dir;
  auto* replay_cmd = app.add_subcommand("replay", "Rerun a trial and compare its logs byte for byte");
  replay_cmd->add_option("dir", replay_dir, "Trial directory")->required()->check(CLI::ExistingDirectory);

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Serve interactive feedback sessions over HTTP");
  serve_cmd->add_option("--bind", serve.bind, "host:port");
  serve_cmd->add_option("--config", serve.config, "Default session config")->check(CLI::ExistingFile);
  serve_cmd->add_option("--out", serve.out, "Session directory root (default <output root>/sessions)");
  serve_cmd->add_flag("--no-resume", serve.no_resume, "Do not restart unfinished sessions");

  ExportArgs exp;
  auto* export_cmd = app.add_subcommand("export-curve", "Aggregate learning curves into a columnar file");
  export_cmd->add_option("--trials", exp.trials, "Trial directories")->required()->check(CLI::ExistingDirectory);
  export_cmd->add_option("--out", exp.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*run_seed_opt) run.seed = run_seed;
  if (*eval_seed_opt) eval.seed = eval_seed;

  if (*run_cmd) return cmd_run(run);
  if (*eval_cmd) return cmd_eval(eval);
  if (*replay_cmd) return cmd_replay(replay_dir);
  if (*serve_cmd) return cmd_serve(serve);
  if (*export_cmd) return cmd_export_curve(exp);
  return kExitConfig;
}
