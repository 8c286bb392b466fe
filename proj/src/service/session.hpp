#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "loop/learn_loop.hpp"

namespace handover {

enum class SessionStatus { AwaitingFeedback, Running, Done, Stalled, Failed };

const char* to_string(SessionStatus s) noexcept;

enum class SubmitOutcome { Accepted, Invalid, Conflict };

struct SubmitResult {
  SubmitOutcome outcome = SubmitOutcome::Accepted;
  std::string message;
};

// Blocking rendezvous between the learning loop (request) and a rater
// (submit). One round at a time; each round accepts exactly one event.
class InteractiveFeedback final : public FeedbackSource {
 public:
  using Clock = std::chrono::steady_clock;

  explicit InteractiveFeedback(double stall_timeout_s);

  FeedbackEvent request(const FeedbackRequest& request) override;

  // The pending payload, or nullopt between rounds.
  std::optional<nlohmann::json> pending() const;
  bool has_pending() const;
  bool stalled() const;
  std::uint64_t rounds_answered() const;

  SubmitResult submit(const FeedbackEvent& event);

  // Unblocks request() with SessionClosed; later requests fail at once.
  void close();

  struct SessionClosed {};

 private:
  double stall_timeout_s_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  bool closed_ = false;
  std::uint64_t answered_ = 0;
  std::optional<nlohmann::json> payload_;
  std::vector<ExperimentId> pending_ids_;
  Clock::time_point since_{};
  std::optional<FeedbackEvent> answer_;
};

// Validates a feedback body and builds the event. Returns the 422 message
// in `error` when the body is well-formed JSON but semantically invalid.
std::optional<FeedbackEvent> parse_feedback_body(const nlohmann::json& body, std::string& error);

// Session configs are always interactive: an absent "feedback_source"
// means interactive, an explicit "oracle" is rejected. Empty text gives
// `fallback`.
TrialConfig session_config_from_json(std::string_view text, const TrialConfig& fallback);

// One learning trial driven by a person. The loop runs on its own thread;
// every method here is safe to call from any thread.
class Session {
 public:
  // A checkpoint resumes the trial after its last completed update.
  Session(std::string id, TrialConfig cfg, std::optional<std::filesystem::path> dir,
          std::optional<std::string> checkpoint = std::nullopt);
  ~Session();

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::string& id() const noexcept { return id_; }
  SessionStatus status() const;
  std::optional<std::string> error() const;

  nlohmann::json pending_json() const;
  // Waits up to ack_wait for the loop to reach its next state after an
  // accepted event.
  SubmitResult submit(const FeedbackEvent& event, std::chrono::milliseconds ack_wait);
  nlohmann::json progress_json() const;
  nlohmann::json policy_json() const;

  // Waits until the loop leaves the running state or the timeout elapses.
  void wait_until_settled(std::chrono::milliseconds timeout) const;

 private:
  void run(std::optional<std::string> checkpoint);

  std::string id_;
  TrialConfig cfg_;
  std::optional<std::filesystem::path> dir_;
  InteractiveFeedback source_;

  mutable std::mutex mu_;
  bool finished_ = false;
  std::optional<std::string> error_;
  int updates_total_ = 0;
  int experiments_ = 0;
  nlohmann::json curve_ = nlohmann::json::array();
  std::optional<GaussianContextualPolicy> policy_;
  int policy_update_ = 0;

  std::thread thread_;
};

struct SessionManagerOptions {
  std::optional<std::filesystem::path> persist_root;
  TrialConfig base_config;  // used when POST /session has an empty body
  std::chrono::milliseconds ready_wait{10000};
  std::chrono::milliseconds ack_wait{5000};
};

class SessionManager {
 public:
  explicit SessionManager(SessionManagerOptions options);

  // Throws ConfigError for an invalid or oracle-mode config.
  std::shared_ptr<Session> create(std::string_view config_json);
  std::shared_ptr<Session> find(const std::string& id) const;
  std::vector<std::string> ids() const;

  // Restarts every unfinished session found under the persist root.
  std::vector<std::string> resume_all();

  const SessionManagerOptions& options() const noexcept { return options_; }

 private:
  std::string new_id();

  SessionManagerOptions options_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
  std::uint64_t salt_;
};

}  // namespace handover
