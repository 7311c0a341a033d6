#include "cw/api.hpp"

#include <charconv>
#include <regex>
#include <thread>

#include <httplib.h>

#include "cw/errors.hpp"

namespace cw {

using nlohmann::json;

namespace {

ApiResponse reply(int status, const json& body) {
  ApiResponse r;
  r.status = status;
  r.body = body.dump() + "\n";
  return r;
}

ApiResponse error(int status, const std::string& code, const std::string& message) {
  return reply(status, {{"code", code}, {"message", message}});
}

// Parses a whole string as a signed integer.
std::optional<std::int64_t> parse_int(const std::string& s) {
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || p != end || s.empty()) return std::nullopt;
  return v;
}

struct BadRequest {
  std::string message;
};

std::optional<std::int64_t> query_int(const ApiRequest& req, const std::string& key) {
  auto it = req.query.find(key);
  if (it == req.query.end() || it->second.empty()) return std::nullopt;
  auto v = parse_int(it->second);
  if (!v) throw BadRequest{"query parameter " + key + " must be an integer"};
  return v;
}

json parse_body(const ApiRequest& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw BadRequest{std::string("body is not valid JSON: ") + e.what()};
  }
}

std::string bearer_token(const std::string& header) {
  constexpr std::string_view prefix = "Bearer ";
  if (header.size() <= prefix.size() || header.compare(0, prefix.size(), prefix) != 0) return {};
  return header.substr(prefix.size());
}

}  // namespace

json to_json(const NodeStatus& n) {
  json j = {{"id", n.id},
            {"on", n.on},
            {"power", n.on ? "on" : "off"},
            {"casing", n.casing_id},
            {"block", n.block_id ? json(*n.block_id) : json(nullptr)},
            {"owner", n.owner ? json(*n.owner) : json(nullptr)},
            {"relay",
             {{"mcu", to_string(n.relay.mcu)},
              {"port", to_string(n.relay.port)},
              {"bit", n.relay.bit}}},
            {"last_activity_ms", n.last_activity.count()}};
  return j;
}

json to_json(const CasingStatus& c) {
  return {{"id", c.id},
          {"nodes", c.node_ids},
          {"powered", c.powered},
          {"temperature", c.temperature ? to_json(*c.temperature) : json(nullptr)},
          {"humidity", c.humidity ? to_json(*c.humidity) : json(nullptr)},
          {"plant", {{"temp_c", c.plant_temp_c}, {"humidity_rh", c.plant_humidity_rh}}}};
}

json to_json(const Health& h) {
  return {{"status", "ok"},
          {"clock", h.simulated ? "simulated" : "wall"},
          {"now_ms", h.now.count()},
          {"cycles", h.cycles},
          {"gaps", h.gaps},
          {"bus_transactions", h.bus_transactions},
          {"readings", h.readings},
          {"next_poll_ms", h.next_poll ? json(h.next_poll->count()) : json(nullptr)}};
}

const std::vector<Endpoint>& Api::endpoints() {
  static const std::vector<Endpoint> kEndpoints = {
      {"GET", "/api/health", false},
      {"GET", "/api/nodes", false},
      {"GET", "/api/nodes/{id}", false},
      {"POST", "/api/nodes/{id}/power", false},
      {"GET", "/api/casings", false},
      {"GET", "/api/readings", false},
      {"GET", "/api/policies", false},
      {"PUT", "/api/policies", true},
      {"GET", "/api/blocks", false},
      {"POST", "/api/blocks", true},
      {"GET", "/api/audit", false},
  };
  return kEndpoints;
}

ApiResponse Api::handle(const ApiRequest& req) const {
  static const std::regex kNodePath(R"(^/api/nodes/([^/]+)$)");
  static const std::regex kPowerPath(R"(^/api/nodes/([^/]+)/power$)");

  const auto& m = req.method;
  const auto& path = req.path;

  if (path == "/ui/bootstrap.json" && m == "GET") {
    return reply(200, {{"api_base", "/api"}});
  }

  // Route lookup first so unknown paths are 404 regardless of auth.
  std::smatch match;
  enum class Route {
    Health, Nodes, Node, Power, Casings, Readings, Policies, Blocks, Audit, None
  } route = Route::None;
  std::vector<std::string> allowed;
  if (path == "/api/health") {
    route = Route::Health;
    allowed = {"GET"};
  } else if (path == "/api/nodes") {
    route = Route::Nodes;
    allowed = {"GET"};
  } else if (std::regex_match(path, match, kPowerPath)) {
    route = Route::Power;
    allowed = {"POST"};
  } else if (std::regex_match(path, match, kNodePath)) {
    route = Route::Node;
    allowed = {"GET"};
  } else if (path == "/api/casings") {
    route = Route::Casings;
    allowed = {"GET"};
  } else if (path == "/api/readings") {
    route = Route::Readings;
    allowed = {"GET"};
  } else if (path == "/api/policies") {
    route = Route::Policies;
    allowed = {"GET", "PUT"};
  } else if (path == "/api/blocks") {
    route = Route::Blocks;
    allowed = {"GET", "POST"};
  } else if (path == "/api/audit") {
    route = Route::Audit;
    allowed = {"GET"};
  }
  if (route == Route::None) return error(404, "not_found", "no such endpoint " + path);
  if (std::find(allowed.begin(), allowed.end(), m) == allowed.end()) {
    auto r = error(405, "method_not_allowed", m + " not allowed on " + path);
    std::string allow;
    for (const auto& a : allowed) allow += (allow.empty() ? "" : ", ") + a;
    r.headers["Allow"] = allow;
    return r;
  }

  try {
    if (route == Route::Health) return reply(200, to_json(service_.health()));

    const auto user = service_.authenticate(bearer_token(req.authorization));
    if (!user) return error(401, "unauthorized", "missing or unknown bearer token");

    auto node_id = [&]() -> int {
      auto v = parse_int(match[1].str());
      if (!v) throw BadRequest{"node id must be an integer"};
      if (*v < 1 || *v > service_.config().node_count) {
        throw RangeError("node " + match[1].str() + " does not exist");
      }
      return static_cast<int>(*v);
    };

    switch (route) {
      case Route::Nodes: {
        json arr = json::array();
        for (const auto& n : service_.nodes()) arr.push_back(to_json(n));
        return reply(200, arr);
      }
      case Route::Node:
        return reply(200, to_json(service_.node(node_id())));
      case Route::Power: {
        const int id = node_id();
        const json body = parse_body(req);
        if (!body.is_object() || !body.contains("on") || !body["on"].is_boolean()) {
          throw BadRequest{R"(body must be {"on": true|false})"};
        }
        const auto ev = service_.submit_power_command(*user, id, body["on"].get<bool>());
        if (ev.outcome == Outcome::Denied) return error(403, "denied", "denied: " + ev.detail);
        if (ev.outcome == Outcome::Failed) {
          auto r = reply(503, {{"code", "bus_failed"},
                               {"message", ev.detail},
                               {"retry_after_ms", kRetryAfterMs},
                               {"event", to_json(ev)}});
          r.headers["Retry-After"] = std::to_string((kRetryAfterMs + 999) / 1000);
          return r;
        }
        return reply(200, {{"event", to_json(ev)}, {"node", to_json(service_.node(id))}});
      }
      case Route::Casings: {
        json arr = json::array();
        for (const auto& c : service_.casings()) arr.push_back(to_json(c));
        return reply(200, arr);
      }
      case Route::Readings: {
        ReadingQuery q;
        if (auto ch = query_int(req, "channel")) {
          const auto& chans = service_.config().channels;
          if (std::none_of(chans.begin(), chans.end(),
                           [&](const ChannelBinding& b) { return b.channel == *ch; })) {
            throw BadRequest{"channel " + std::to_string(*ch) + " is not configured"};
          }
          q.channel = static_cast<int>(*ch);
        }
        if (auto s = query_int(req, "since")) q.since = Millis{*s};
        if (auto u = query_int(req, "until")) q.until = Millis{*u};
        if (auto l = query_int(req, "last")) {
          if (*l < 0) throw BadRequest{"last must be >= 0"};
          q.last = static_cast<std::size_t>(*l);
        }
        json arr = json::array();
        for (const auto& r : service_.query_readings(q)) arr.push_back(to_json(r));
        return reply(200, arr);
      }
      case Route::Policies: {
        if (m == "PUT") {
          if (!user->admin) return error(403, "denied", "denied: only admins may edit policies");
          const json body = parse_body(req);
          const json& arr = body.is_object() && body.contains("policies") ? body["policies"] : body;
          if (!arr.is_array()) throw BadRequest{"body must be an array of policies"};
          std::vector<Policy> policies;
          for (std::size_t i = 0; i < arr.size(); ++i) {
            policies.push_back(policy_from_json(arr[i], "/" + std::to_string(i)));
          }
          service_.set_policies(*user, std::move(policies));
        }
        json arr = json::array();
        for (const auto& p : service_.policies()) arr.push_back(to_json(p));
        return reply(200, arr);
      }
      case Route::Blocks: {
        if (m == "POST") {
          if (!user->admin) return error(403, "denied", "denied: only admins may create blocks");
          auto block = block_from_json(parse_body(req));
          service_.add_block(*user, block);
          return reply(201, to_json(block));
        }
        json arr = json::array();
        for (const auto& b : service_.blocks()) arr.push_back(to_json(b));
        return reply(200, arr);
      }
      case Route::Audit: {
        std::optional<Millis> since;
        std::optional<std::size_t> last;
        if (auto s = query_int(req, "since")) since = Millis{*s};
        if (auto l = query_int(req, "last")) {
          if (*l < 0) throw BadRequest{"last must be >= 0"};
          last = static_cast<std::size_t>(*l);
        }
        json arr = json::array();
        for (const auto& e : service_.audit(since, last)) arr.push_back(to_json(e));
        return reply(200, arr);
      }
      default:
        break;
    }
  } catch (const BadRequest& e) {
    return error(400, "bad_request", e.message);
  } catch (const AclError& e) {
    return error(403, "denied", std::string("denied: ") + e.what());
  } catch (const ConflictError& e) {
    return error(409, "conflict", e.what());
  } catch (const ConfigError& e) {
    return error(400, "bad_request", e.what());
  } catch (const RangeError& e) {
    return error(route == Route::Node || route == Route::Power ? 404 : 400,
                 route == Route::Node || route == Route::Power ? "not_found" : "bad_request",
                 e.what());
  } catch (const StorageError& e) {
    return error(503, "storage", e.what());
  }
  return error(404, "not_found", "no such endpoint " + path);
}

struct HttpServer::Impl {
  Api api;
  httplib::Server server;
  std::thread thread;

  explicit Impl(ControlPlane& service) : api(service) {}
};

HttpServer::HttpServer(ControlPlane& service, std::optional<std::filesystem::path> ui_dir)
    : impl_(std::make_unique<Impl>(service)) {
  // httplib's default adds SO_REUSEPORT, which lets a second daemon bind the
  // same port silently.
  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  auto forward = [this](const httplib::Request& hreq, httplib::Response& hres) {
    ApiRequest req;
    req.method = hreq.method;
    req.path = hreq.path;
    for (const auto& [k, v] : hreq.params) req.query.emplace(k, v);
    req.authorization = hreq.get_header_value("Authorization");
    req.body = hreq.body;
    const auto res = impl_->api.handle(req);
    hres.status = res.status;
    for (const auto& [k, v] : res.headers) hres.set_header(k, v);
    hres.set_content(res.body, res.content_type);
  };
  auto& s = impl_->server;
  s.Get(".*", forward);
  s.Post(".*", forward);
  s.Put(".*", forward);
  s.Delete(".*", forward);
  s.Patch(".*", forward);
  if (ui_dir && std::filesystem::is_directory(*ui_dir)) {
    s.set_mount_point("/ui", ui_dir->string());
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  auto& s = impl_->server;
  if (port == 0) {
    port_ = s.bind_to_any_port(host);
    if (port_ <= 0) throw BindError("cannot bind " + host + ":0");
  } else {
    if (!s.bind_to_port(host, port)) {
      throw BindError("cannot bind " + host + ":" + std::to_string(port));
    }
    port_ = port;
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace cw
