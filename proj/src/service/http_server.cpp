#include "service/http_server.hpp"

#include <httplib.h>

#include "core/error.hpp"

namespace handover {

struct HttpServer::Impl {
  explicit Impl(SessionManager& sessions) : router(sessions) {}

  Router router;
  httplib::Server server;
};

HttpServer::HttpServer(SessionManager& sessions) : impl_(std::make_unique<Impl>(sessions)) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const HttpResponse r = impl_->router.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  impl_->server.Get(".*", handler);
  impl_->server.Post(".*", handler);
  impl_->server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  impl_->server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                     {"Access-Control-Allow-Headers", "Content-Type"},
                                     {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound <= 0) fail(ErrorCode::Io, "cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    fail(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace handover
