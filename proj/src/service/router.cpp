#include "service/router.hpp"

#include <vector>

#include <json.hpp>

#include "core/error.hpp"

namespace handover {

using nlohmann::json;

namespace {

HttpResponse reply(int status, const json& body) { return {status, body.dump() + "\n"}; }

HttpResponse error_reply(int status, const std::string& code, const std::string& message,
                         const std::string& field = {}) {
  json e = {{"code", code}, {"message", message}};
  if (!field.empty()) e["field"] = field;
  return reply(status, {{"error", e}});
}

std::vector<std::string_view> split_path(std::string_view path) {
  const auto q = path.find('?');
  if (q != std::string_view::npos) path = path.substr(0, q);
  std::vector<std::string_view> parts;
  std::size_t i = 0;
  while (i < path.size()) {
    if (path[i] == '/') {
      ++i;
      continue;
    }
    const auto j = path.find('/', i);
    const auto end = j == std::string_view::npos ? path.size() : j;
    parts.push_back(path.substr(i, end - i));
    i = end;
  }
  return parts;
}

}  // namespace

HttpResponse Router::handle(std::string_view method, std::string_view path, std::string_view body) {
  const auto parts = split_path(path);
  if (parts.empty() || parts[0] != "session" || parts.size() > 3 || parts.size() == 2) {
    return error_reply(404, "not-found", "no such endpoint");
  }

  try {
    if (parts.size() == 1) {
      if (method != "POST") return error_reply(405, "method-not-allowed", "use POST /session");
      const auto session = sessions_.create(body);
      return reply(201, {{"id", session->id()}, {"status", to_string(session->status())}});
    }

    const std::string id(parts[1]);
    const std::string_view action = parts[2];
    const bool known = action == "pending" || action == "feedback" || action == "progress" || action == "policy";
    if (!known) return error_reply(404, "not-found", "no such endpoint");
    const bool want_post = action == "feedback";
    if ((method == "POST") != want_post || (method != "POST" && method != "GET")) {
      return error_reply(405, "method-not-allowed", std::string("use ") + (want_post ? "POST" : "GET"));
    }
    const auto session = sessions_.find(id);
    if (!session) return error_reply(404, "not-found", "unknown session " + id);

    if (action == "pending") return reply(200, session->pending_json());
    if (action == "progress") return reply(200, session->progress_json());
    if (action == "policy") return reply(200, session->policy_json());

    json event_body;
    try {
      event_body = json::parse(body);
    } catch (const json::parse_error&) {
      return error_reply(400, "malformed", "feedback body is not valid JSON");
    }
    std::string problem;
    const auto event = parse_feedback_body(event_body, problem);
    if (!event) return error_reply(422, "validation", problem);
    const SubmitResult r = session->submit(*event, sessions_.options().ack_wait);
    if (r.outcome == SubmitOutcome::Conflict) return error_reply(409, "conflict", r.message);
    if (r.outcome == SubmitOutcome::Invalid) return error_reply(422, "validation", r.message);
    return reply(200, {{"accepted", true}, {"id", id}, {"status", to_string(session->status())}});
  } catch (const ConfigError& e) {
    return error_reply(422, "config", e.what(), e.field());
  } catch (const Error& e) {
    const int status = e.code() == ErrorCode::Conflict ? 409 : e.code() == ErrorCode::NotFound ? 404 : 500;
    return error_reply(status, to_string(e.code()), e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "internal", e.what());
  }
}

}  // namespace handover
