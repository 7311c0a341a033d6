#pragma once

// HTTP/JSON surface of the daemon. Api is a plain request router, so it can
// be exercised without sockets; HttpServer binds it to a port.
//
// Every route except /api/health and /ui/bootstrap.json requires
// "Authorization: Bearer <token>". Errors are {"code": ..., "message": ...}.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cw/service.hpp"

namespace cw {

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string authorization;  // raw header value
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::map<std::string, std::string> headers;
};

struct Endpoint {
  std::string method;
  std::string path;  // "{id}" marks a path parameter
  bool admin_only = false;
};

// Delay suggested to clients after a failed bus transaction.
inline constexpr int kRetryAfterMs = 1000;

class Api {
 public:
  explicit Api(ControlPlane& service) : service_(service) {}

  ApiResponse handle(const ApiRequest& req) const;

  // Every /api route, in documentation order.
  static const std::vector<Endpoint>& endpoints();

 private:
  ControlPlane& service_;
};

nlohmann::json to_json(const NodeStatus& n);
nlohmann::json to_json(const CasingStatus& c);
nlohmann::json to_json(const Health& h);

class HttpServer {
 public:
  HttpServer(ControlPlane& service, std::optional<std::filesystem::path> ui_dir = std::nullopt);
  ~HttpServer();

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds and starts serving on a background thread. Port 0 picks a free
  // port. Returns the bound port; throws BindError.
  int start(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace cw
