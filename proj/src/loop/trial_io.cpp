#include "loop/trial_io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <sstream>

#include "core/error.hpp"
#include "loop/trial_json.hpp"

namespace handover {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string policy_file(std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "policy_%03zu.txt", index);
  return name;
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string());
  out << line << '\n';
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) fail(ErrorCode::Io, "cannot open " + tmp.string());
    out << content;
    if (!out) fail(ErrorCode::Io, "cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::Io, "cannot replace " + path.string() + ": " + ec.message());
}

fs::path default_output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path allocate_directory(const fs::path& root, const std::string& name) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) fail(ErrorCode::Io, "cannot create " + root.string() + ": " + ec.message());
  for (int n = 0; n < 100000; ++n) {
    const fs::path dir = root / (n == 0 ? name : name + "-" + std::to_string(n));
    // create_directory reports false when the path already exists, which
    // makes the check and the claim one atomic step.
    if (fs::create_directory(dir, ec)) return dir;
    if (ec) fail(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  }
  fail(ErrorCode::Io, "no free directory name under " + root.string());
}

std::string trial_directory_name(std::uint64_t seed) {
  char name[48];
  std::snprintf(name, sizeof name, "trial-seed%04llu", static_cast<unsigned long long>(seed));
  return name;
}

TrialWriter::TrialWriter(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_ / "policies", ec);
  if (ec) fail(ErrorCode::Io, "cannot create " + (dir_ / "policies").string() + ": " + ec.message());
}

void TrialWriter::write_policy(const LearningTrial& trial, std::size_t index) {
  write_file_atomic(dir_ / "policies" / policy_file(index), trial.policies()[index].snapshot());
}

void TrialWriter::write_history(const LearningTrial& trial) {
  const auto& h = trial.history();
  std::string dataset;
  for (std::size_t i = 0; i < h.size(); ++i) {
    dataset += record_json(h.records[i], h.outcomes[i]).dump() + "\n";
  }
  write_file_atomic(dir_ / "dataset.jsonl", dataset);
  std::string feedback;
  for (const auto& e : h.feedback) feedback += feedback_json(e).dump() + "\n";
  write_file_atomic(dir_ / "feedback.jsonl", feedback);
  write_file_atomic(dir_ / "checkpoint.json", trial.checkpoint());
}

void TrialWriter::begin(const LearningTrial& trial) {
  write_file_atomic(dir_ / "config.json", dump_trial_config(trial.config()));
  std::string log;
  for (const auto& l : trial.logs()) log += iteration_json(l).dump() + "\n";
  write_file_atomic(dir_ / "log.jsonl", log);
  std::string timing;
  for (const auto& t : trial.timings()) timing += timing_json(t).dump() + "\n";
  write_file_atomic(dir_ / "timing.jsonl", timing);
  for (std::size_t i = 0; i < trial.policies().size(); ++i) write_policy(trial, i);
  write_history(trial);
  std::error_code ec;
  fs::remove(dir_ / "summary.json", ec);
}

void TrialWriter::record_step(const LearningTrial& trial) {
  if (trial.logs().empty()) fail(ErrorCode::State, "no update to record");
  append_line(dir_ / "log.jsonl", iteration_json(trial.logs().back()).dump());
  append_line(dir_ / "timing.jsonl", timing_json(trial.timings().back()).dump());
  write_policy(trial, trial.policies().size() - 1);
  write_history(trial);
}

json summary_json(const TrialSummary& s) {
  json j = {{"status", s.complete ? "complete" : "aborted"},
            {"updates", s.updates},
            {"experiments", s.experiments}};
  j["final_expected_latent_reward"] = s.final_latent_reward ? json(*s.final_latent_reward) : json(nullptr);
  j["final_expected_oracle_reward"] = s.final_oracle_reward ? json(*s.final_oracle_reward) : json(nullptr);
  j["final_policy"] = "policies/" + policy_file(static_cast<std::size_t>(s.updates));
  j["error"] = s.error ? json(*s.error) : json(nullptr);
  return j;
}

namespace {

TrialSummary summarize(const LearningTrial& trial, const fs::path& dir) {
  TrialSummary s;
  s.dir = dir;
  s.complete = trial.done();
  s.updates = trial.completed_updates();
  s.experiments = static_cast<int>(trial.history().size());
  if (!trial.logs().empty()) s.final_latent_reward = trial.logs().back().expected_latent_reward;
  const auto& cfg = trial.config();
  if (s.complete && cfg.feedback == FeedbackMode::Oracle && cfg.eval_rollouts > 0) {
    s.final_oracle_reward = expected_oracle_reward(trial.policy(), cfg, trial.streams(), cfg.eval_rollouts);
  }
  return s;
}

}  // namespace

TrialSummary TrialWriter::finish(const LearningTrial& trial, const std::optional<std::string>& error) {
  TrialSummary s = summarize(trial, dir_);
  if (error) {
    s.complete = false;
    s.final_oracle_reward.reset();
    s.error = error;
  }
  write_file_atomic(dir_ / "summary.json", summary_json(s).dump(2) + "\n");
  return s;
}

TrialSummary drive_trial(LearningTrial& trial, TrialWriter& writer) {
  writer.begin(trial);
  try {
    while (!trial.done()) {
      trial.step();
      writer.record_step(trial);
    }
  } catch (const std::exception& e) {
    try {
      writer.finish(trial, std::string(e.what()));
    } catch (...) {
      // the original error matters more
    }
    throw;
  }
  return writer.finish(trial, std::nullopt);
}

TrialSummary run_trial(const TrialConfig& cfg, const fs::path& dir) {
  if (cfg.feedback != FeedbackMode::Oracle) {
    throw ConfigError("feedback_source", "run needs the oracle feedback source; use serve for interactive trials");
  }
  TrialStreams streams(cfg.seed);
  OracleFeedback oracle(cfg.oracle, streams.feedback());
  LearningTrial trial(cfg, oracle);
  TrialWriter writer(dir);
  return drive_trial(trial, writer);
}

RecordedFeedback::RecordedFeedback(std::vector<FeedbackEvent> events) : events_(std::move(events)) {}

FeedbackEvent RecordedFeedback::request(const FeedbackRequest&) {
  if (next_ >= events_.size()) fail(ErrorCode::State, "feedback log exhausted");
  return events_[next_++];
}

std::vector<FeedbackEvent> load_feedback_log(const fs::path& path) {
  std::vector<FeedbackEvent> events;
  std::istringstream in(read_file(path));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      events.push_back(feedback_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      fail(ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return events;
}

ReplayReport replay_trial(const fs::path& dir) {
  const TrialConfig cfg = load_trial_config((dir / "config.json").string());
  const fs::path scratch = allocate_directory(fs::temp_directory_path(), "handover-replay");
  ReplayReport report;
  try {
    TrialStreams streams(cfg.seed);
    std::unique_ptr<FeedbackSource> source;
    if (cfg.feedback == FeedbackMode::Oracle) {
      source = std::make_unique<OracleFeedback>(cfg.oracle, streams.feedback());
    } else {
      source = std::make_unique<RecordedFeedback>(load_feedback_log(dir / "feedback.jsonl"));
    }
    LearningTrial trial(cfg, *source);
    TrialWriter writer(scratch);
    // An aborted original stops early; replay the same number of updates.
    int target = cfg.updates;
    if (fs::exists(dir / "summary.json")) {
      const json s = json::parse(read_file(dir / "summary.json"));
      if (s.value("status", "") != "complete") target = s.value("updates", 0);
    }
    writer.begin(trial);
    while (trial.completed_updates() < target) {
      trial.step();
      writer.record_step(trial);
    }
    if (trial.done()) {
      drive_trial(trial, writer);
    }
  } catch (const std::exception& e) {
    report.error = e.what();
  }

  std::vector<std::string> names = {"config.json", "log.jsonl", "dataset.jsonl", "feedback.jsonl",
                                    "checkpoint.json"};
  if (fs::exists(dir / "summary.json") &&
      json::parse(read_file(dir / "summary.json")).value("status", "") == "complete") {
    names.push_back("summary.json");
  }
  std::vector<std::string> policies;
  for (const fs::path& d : {dir, scratch}) {
    if (!fs::exists(d / "policies")) continue;
    for (const auto& entry : fs::directory_iterator(d / "policies")) {
      const std::string name = "policies/" + entry.path().filename().string();
      if (std::find(policies.begin(), policies.end(), name) == policies.end()) policies.push_back(name);
    }
  }
  std::sort(policies.begin(), policies.end());
  names.insert(names.end(), policies.begin(), policies.end());

  for (const auto& name : names) {
    report.compared.push_back(name);
    const bool a = fs::exists(dir / name);
    const bool b = fs::exists(scratch / name);
    if (!a || !b || read_file(dir / name) != read_file(scratch / name)) report.differing.push_back(name);
  }
  report.identical = !report.error && report.differing.empty();
  std::error_code ec;
  fs::remove_all(scratch, ec);
  return report;
}

}  // namespace handover
