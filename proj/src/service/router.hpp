#pragma once

#include <string>
#include <string_view>

#include "service/session.hpp"

namespace handover {

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON text
};

// Maps the session endpoints onto a SessionManager, independent of any
// transport:
//   POST /session                       body: trial config JSON (may be empty)
//   GET  /session/{id}/pending
//   POST /session/{id}/feedback         body: feedback event JSON
//   GET  /session/{id}/progress
//   GET  /session/{id}/policy
// Errors carry {"error": {"code", "message", "field"?}} with 400 for
// malformed JSON, 404 for unknown sessions or routes, 405 for a wrong
// method, 409 for stale/unknown experiment ids, 422 for invalid values.
class Router {
 public:
  explicit Router(SessionManager& sessions) : sessions_(sessions) {}

  HttpResponse handle(std::string_view method, std::string_view path, std::string_view body);

 private:
  SessionManager& sessions_;
};

}  // namespace handover
