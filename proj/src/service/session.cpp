#include "service/session.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <random>

#include "core/error.hpp"
#include "loop/trial_io.hpp"
#include "loop/trial_json.hpp"

namespace handover {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(SessionStatus s) noexcept {
  switch (s) {
    case SessionStatus::AwaitingFeedback: return "awaiting-feedback";
    case SessionStatus::Running: return "running";
    case SessionStatus::Done: return "done";
    case SessionStatus::Stalled: return "stalled";
    case SessionStatus::Failed: return "failed";
  }
  return "unknown";
}

namespace {

json rollout_json(const ExperimentRecord& rec, const HandoverMetrics& m, const RolloutTrace* trace) {
  json j = {{"id", rec.id},
            {"hand_speed", rec.context.hand_speed()},
            {"params", params_json(rec.params)},
            {"metrics", metrics_json(m)}};
  j["trace"] = trace ? trace_json(*trace) : json(nullptr);
  return j;
}

void poll_until(const std::function<bool()>& done, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (!done() && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
}

}  // namespace

InteractiveFeedback::InteractiveFeedback(double stall_timeout_s) : stall_timeout_s_(stall_timeout_s) {}

FeedbackEvent InteractiveFeedback::request(const FeedbackRequest& req) {
  if (!req.record || !req.metrics) fail(ErrorCode::InvalidArgument, "feedback request is incomplete");
  const bool paired = req.previous && req.previous_metrics;
  json payload = {{"round",
                   {{"kind", paired ? "preference" : "absolute"},
                    {"ids", paired ? json{req.record->id, req.previous->id} : json{req.record->id}}}},
                  {"rollout", rollout_json(*req.record, *req.metrics, req.trace)}};
  payload["comparison"] =
      paired ? rollout_json(*req.previous, *req.previous_metrics, req.previous_trace) : json(nullptr);

  std::unique_lock lock(mu_);
  if (closed_) throw SessionClosed{};
  payload_ = std::move(payload);
  pending_ids_ = {req.record->id};
  if (paired) pending_ids_.push_back(req.previous->id);
  since_ = Clock::now();
  answer_.reset();
  cv_.wait(lock, [&] { return closed_ || answer_.has_value(); });
  if (!answer_) {
    payload_.reset();
    pending_ids_.clear();
    throw SessionClosed{};
  }
  FeedbackEvent event = *answer_;
  answer_.reset();
  return event;
}

std::optional<json> InteractiveFeedback::pending() const {
  std::lock_guard lock(mu_);
  return payload_;
}

bool InteractiveFeedback::has_pending() const {
  std::lock_guard lock(mu_);
  return payload_.has_value();
}

bool InteractiveFeedback::stalled() const {
  std::lock_guard lock(mu_);
  return payload_ && std::chrono::duration<double>(Clock::now() - since_).count() > stall_timeout_s_;
}

std::uint64_t InteractiveFeedback::rounds_answered() const {
  std::lock_guard lock(mu_);
  return answered_;
}

SubmitResult InteractiveFeedback::submit(const FeedbackEvent& event) {
  std::lock_guard lock(mu_);
  if (closed_ || !payload_) return {SubmitOutcome::Conflict, "no feedback is pending"};
  const auto refs = event.referenced_ids();
  const bool names_current = std::find(refs.begin(), refs.end(), pending_ids_.front()) != refs.end();
  const bool only_pending = std::all_of(refs.begin(), refs.end(), [&](ExperimentId id) {
    return std::find(pending_ids_.begin(), pending_ids_.end(), id) != pending_ids_.end();
  });
  if (!names_current || !only_pending) {
    std::string ids;
    for (ExperimentId id : pending_ids_) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
    return {SubmitOutcome::Conflict, "feedback must name the pending experiment ids (" + ids + ")"};
  }
  // Claiming the round here, under the lock, is what makes acceptance
  // exactly-once: a concurrent duplicate sees no pending round.
  answer_ = event;
  payload_.reset();
  pending_ids_.clear();
  ++answered_;
  cv_.notify_all();
  return {SubmitOutcome::Accepted, {}};
}

void InteractiveFeedback::close() {
  std::lock_guard lock(mu_);
  closed_ = true;
  cv_.notify_all();
}

std::optional<FeedbackEvent> parse_feedback_body(const json& body, std::string& error) {
  auto integer = [](const json& j, const char* key) -> std::optional<ExperimentId> {
    if (!j.contains(key) || !j.at(key).is_number_integer()) return std::nullopt;
    return j.at(key).get<ExperimentId>();
  };
  if (!body.is_object()) {
    error = "feedback must be a JSON object";
    return std::nullopt;
  }
  if (!body.contains("kind") || !body.at("kind").is_string()) {
    error = "kind: must be \"absolute\" or \"preference\"";
    return std::nullopt;
  }
  const std::string kind = body.at("kind").get<std::string>();
  if (kind == "absolute") {
    const auto id = integer(body, "id");
    if (!id) {
      error = "id: must be an integer experiment id";
      return std::nullopt;
    }
    if (!body.contains("value") || !body.at("value").is_number()) {
      error = "value: must be a number";
      return std::nullopt;
    }
    const double v = body.at("value").get<double>();
    if (!std::isfinite(v) || v < kRatingMin || v > kRatingMax) {
      error = "value: rating must be in [1, 10]";
      return std::nullopt;
    }
    return FeedbackEvent::absolute(*id, v);
  }
  if (kind == "preference") {
    const auto winner = integer(body, "winner");
    const auto loser = integer(body, "loser");
    if (!winner || !loser) {
      error = "winner, loser: must be integer experiment ids";
      return std::nullopt;
    }
    if (*winner == *loser) {
      error = "winner and loser must differ";
      return std::nullopt;
    }
    return FeedbackEvent::preference(*winner, *loser);
  }
  error = "kind: must be \"absolute\" or \"preference\"";
  return std::nullopt;
}

TrialConfig session_config_from_json(std::string_view text, const TrialConfig& fallback) {
  const bool blank = std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); });
  TrialConfig cfg;
  if (blank) {
    cfg = fallback;
    cfg.feedback = FeedbackMode::Interactive;
  } else {
    json root;
    try {
      root = json::parse(text);
    } catch (const json::parse_error&) {
      cfg = parse_trial_config(text);  // throws with a line and column
    }
    if (root.is_object() && !root.contains("feedback_source")) root["feedback_source"] = "interactive";
    cfg = parse_trial_config(root.dump());
  }
  if (cfg.feedback != FeedbackMode::Interactive) {
    throw ConfigError("feedback_source", "sessions require the interactive feedback source");
  }
  cfg.validate();
  return cfg;
}

Session::Session(std::string id, TrialConfig cfg, std::optional<fs::path> dir,
                 std::optional<std::string> checkpoint)
    : id_(std::move(id)),
      cfg_(std::move(cfg)),
      dir_(std::move(dir)),
      source_(cfg_.stall_timeout),
      updates_total_(cfg_.updates) {
  if (cfg_.feedback != FeedbackMode::Interactive) {
    throw ConfigError("feedback_source", "sessions require the interactive feedback source");
  }
  cfg_.validate();
  thread_ = std::thread([this, checkpoint = std::move(checkpoint)]() mutable { run(std::move(checkpoint)); });
}

Session::~Session() {
  source_.close();
  if (thread_.joinable()) thread_.join();
}

void Session::run(std::optional<std::string> checkpoint) {
  auto publish = [this](const LearningTrial& trial) {
    json curve = json::array();
    for (const auto& l : trial.logs()) {
      curve.push_back({{"update", l.update},
                       {"experiments", l.experiments},
                       {"expected_latent_reward", l.expected_latent_reward}});
    }
    std::lock_guard lock(mu_);
    curve_ = std::move(curve);
    policy_ = trial.policy();
    policy_update_ = trial.completed_updates();
    experiments_ = static_cast<int>(trial.history().size());
  };

  std::optional<LearningTrial> trial;
  std::optional<TrialWriter> writer;
  try {
    if (checkpoint) {
      trial.emplace(LearningTrial::resume(cfg_, source_, *checkpoint));
    } else {
      trial.emplace(cfg_, source_);
    }
    if (dir_) {
      writer.emplace(*dir_);
      writer->begin(*trial);
    }
    publish(*trial);
    while (!trial->done()) {
      trial->step();
      if (writer) writer->record_step(*trial);
      publish(*trial);
    }
    if (writer) writer->finish(*trial, std::nullopt);
    std::lock_guard lock(mu_);
    finished_ = true;
  } catch (const InteractiveFeedback::SessionClosed&) {
    // shutting down; the checkpoint of the last completed update stays
  } catch (const std::exception& e) {
    if (writer && trial) {
      try {
        writer->finish(*trial, std::string(e.what()));
      } catch (...) {
        // keep the original error
      }
    }
    std::lock_guard lock(mu_);
    error_ = e.what();
  }
}

SessionStatus Session::status() const {
  {
    std::lock_guard lock(mu_);
    if (error_) return SessionStatus::Failed;
    if (finished_) return SessionStatus::Done;
  }
  if (source_.stalled()) return SessionStatus::Stalled;
  if (source_.has_pending()) return SessionStatus::AwaitingFeedback;
  return SessionStatus::Running;
}

std::optional<std::string> Session::error() const {
  std::lock_guard lock(mu_);
  return error_;
}

void Session::wait_until_settled(std::chrono::milliseconds timeout) const {
  poll_until([this] { return status() != SessionStatus::Running; }, timeout);
}

json Session::pending_json() const {
  const SessionStatus s = status();
  std::optional<json> payload = source_.pending();
  json j = {{"id", id_}, {"status", to_string(s)}};
  if (payload) {
    j.update(*payload);
  } else {
    j["round"] = nullptr;
    j["rollout"] = nullptr;
    j["comparison"] = nullptr;
  }
  if (s == SessionStatus::Failed) j["error"] = error().value_or("");
  return j;
}

SubmitResult Session::submit(const FeedbackEvent& event, std::chrono::milliseconds ack_wait) {
  SubmitResult r = source_.submit(event);
  if (r.outcome == SubmitOutcome::Accepted) wait_until_settled(ack_wait);
  return r;
}

json Session::progress_json() const {
  const SessionStatus s = status();
  std::lock_guard lock(mu_);
  json j = {{"id", id_},
            {"status", to_string(s)},
            {"updates_completed", policy_update_},
            {"updates_total", updates_total_},
            {"experiments", experiments_},
            {"curve", curve_}};
  if (policy_) {
    json summary = policy_summary_json(*policy_);
    summary.erase("snapshot");
    j["policy"] = summary;
  } else {
    j["policy"] = nullptr;
  }
  if (error_) j["error"] = *error_;
  return j;
}

json Session::policy_json() const {
  std::lock_guard lock(mu_);
  json j = {{"id", id_}, {"update", policy_update_}};
  if (policy_) {
    j.update(policy_summary_json(*policy_));
  } else {
    j["parameters"] = nullptr;
  }
  return j;
}

SessionManager::SessionManager(SessionManagerOptions options) : options_(std::move(options)) {
  options_.base_config.feedback = FeedbackMode::Interactive;
  salt_ = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
}

std::string SessionManager::new_id() {
  for (;;) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%012llx",
                  static_cast<unsigned long long>(splitmix64(salt_ + ++counter_) & 0xffffffffffffULL));
    std::string id = buf;
    if (sessions_.count(id)) continue;
    if (options_.persist_root && fs::exists(*options_.persist_root / id)) continue;
    return id;
  }
}

std::shared_ptr<Session> SessionManager::create(std::string_view config_json) {
  const TrialConfig cfg = session_config_from_json(config_json, options_.base_config);
  std::shared_ptr<Session> session;
  {
    std::lock_guard lock(mu_);
    const std::string id = new_id();
    std::optional<fs::path> dir;
    if (options_.persist_root) dir = allocate_directory(*options_.persist_root, id);
    session = std::make_shared<Session>(id, cfg, dir);
    sessions_.emplace(id, session);
  }
  session->wait_until_settled(options_.ready_wait);
  return session;
}

std::shared_ptr<Session> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::vector<std::string> SessionManager::ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

std::vector<std::string> SessionManager::resume_all() {
  std::vector<std::string> resumed;
  if (!options_.persist_root || !fs::exists(*options_.persist_root)) return resumed;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(*options_.persist_root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    if (!fs::exists(dir / "config.json") || !fs::exists(dir / "checkpoint.json")) continue;
    if (fs::exists(dir / "summary.json") &&
        json::parse(read_file(dir / "summary.json")).value("status", "") == "complete") {
      continue;
    }
    const std::string id = dir.filename().string();
    std::lock_guard lock(mu_);
    if (sessions_.count(id)) continue;
    TrialConfig cfg = load_trial_config((dir / "config.json").string());
    auto session = std::make_shared<Session>(id, std::move(cfg), dir, read_file(dir / "checkpoint.json"));
    sessions_.emplace(id, session);
    resumed.push_back(id);
  }
  for (const auto& id : resumed) find(id)->wait_until_settled(options_.ready_wait);
  return resumed;
}

}  // namespace handover
