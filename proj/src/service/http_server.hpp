#pragma once

#include <memory>
#include <string>

#include "service/router.hpp"

namespace handover {

// cpp-httplib transport for Router. Responses carry a permissive CORS
// header so a browser console on another port can poll.
class HttpServer {
 public:
  explicit HttpServer(SessionManager& sessions);
  ~HttpServer();

  // Port 0 binds any free port. Returns the bound port; throws Io on failure.
  int bind(const std::string& host, int port);
  // Serves until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace handover
