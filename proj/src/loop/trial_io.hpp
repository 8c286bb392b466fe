#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "loop/learn_loop.hpp"

namespace handover {

// Overrides the default output root ("runs") for run and serve.
inline constexpr const char* kOutputRootEnv = "HANDOVER_OUT_ROOT";

std::filesystem::path default_output_root();

// Creates root/name, or the first free root/name-N. Never reuses an
// existing directory, even under concurrent callers.
std::filesystem::path allocate_directory(const std::filesystem::path& root, const std::string& name);

std::string trial_directory_name(std::uint64_t seed);

struct TrialSummary {
  std::filesystem::path dir;
  bool complete = false;
  int updates = 0;
  int experiments = 0;
  std::optional<double> final_latent_reward;   // last batch
  std::optional<double> final_oracle_reward;   // final policy, oracle mode only
  std::optional<std::string> error;
};

// Writes a trial directory:
//   config.json      the full trial config
//   log.jsonl        one line per update, deterministic
//   timing.jsonl     wall-clock seconds per phase
//   dataset.jsonl    one line per experiment (latent rewards as of the last update)
//   feedback.jsonl   feedback events in arrival order
//   policies/        policy_000.txt (initial) .. policy_HHH.txt
//   checkpoint.json  resumable state after the last completed update
//   summary.json     outcome, written by finish()
class TrialWriter {
 public:
  explicit TrialWriter(std::filesystem::path dir);

  const std::filesystem::path& dir() const noexcept { return dir_; }

  // Writes everything the trial holds so far, replacing earlier files.
  void begin(const LearningTrial& trial);
  // Appends the most recent update.
  void record_step(const LearningTrial& trial);
  // Writes summary.json; the error, if any, marks the trial aborted.
  TrialSummary finish(const LearningTrial& trial, const std::optional<std::string>& error);

 private:
  void write_history(const LearningTrial& trial);
  void write_policy(const LearningTrial& trial, std::size_t index);

  std::filesystem::path dir_;
};

nlohmann::json summary_json(const TrialSummary& s);

// Runs an oracle-mode trial to completion in an existing, empty directory.
// On failure the partial artifacts and an "aborted" summary remain and the
// error is rethrown.
TrialSummary run_trial(const TrialConfig& cfg, const std::filesystem::path& dir);

// Drives any trial (fresh or resumed) to completion, writing as it goes.
TrialSummary drive_trial(LearningTrial& trial, TrialWriter& writer);

// Replays a feedback log verbatim, for trials rated by a person.
class RecordedFeedback final : public FeedbackSource {
 public:
  explicit RecordedFeedback(std::vector<FeedbackEvent> events);
  FeedbackEvent request(const FeedbackRequest& request) override;

 private:
  std::vector<FeedbackEvent> events_;
  std::size_t next_ = 0;
};

std::vector<FeedbackEvent> load_feedback_log(const std::filesystem::path& path);

struct ReplayReport {
  bool identical = false;
  std::vector<std::string> compared;
  std::vector<std::string> differing;
  std::optional<std::string> error;  // the replay itself failed
};

// Reruns the trial in dir from its config into a scratch directory and
// byte-compares every deterministic artifact. Oracle trials regenerate
// their feedback; interactive trials reuse feedback.jsonl.
ReplayReport replay_trial(const std::filesystem::path& dir);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary file and rename, so readers never see a torn file.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace handover
