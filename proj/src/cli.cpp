#include "cw/cli.hpp"

#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "cw/api.hpp"
#include "cw/config.hpp"
#include "cw/errors.hpp"
#include "cw/service.hpp"

namespace cw::cli {

using nlohmann::json;

namespace {

struct Globals {
  std::string api_url = kDefaultApiUrl;
  std::string token;
  bool json = false;
};

struct HttpResult {
  bool reached = false;
  int status = 0;
  std::string body;
  std::string transport_error;
};

HttpResult call(const Globals& g, const std::string& method, const std::string& target,
                const std::string& body = {}) {
  HttpResult out;
  httplib::Client client(g.api_url);
  if (!client.is_valid()) {
    out.transport_error = "invalid api url " + g.api_url;
    return out;
  }
  client.set_connection_timeout(std::chrono::seconds(3));
  client.set_read_timeout(std::chrono::seconds(30));
  httplib::Headers headers;
  if (!g.token.empty()) headers.emplace("Authorization", "Bearer " + g.token);

  httplib::Result res = [&] {
    if (method == "POST") return client.Post(target, headers, body, "application/json");
    if (method == "PUT") return client.Put(target, headers, body, "application/json");
    return client.Get(target, headers);
  }();
  if (!res) {
    out.transport_error = httplib::to_string(res.error());
    return out;
  }
  out.reached = true;
  out.status = res->status;
  out.body = res->body;
  return out;
}

std::string str(const json& v) {
  if (v.is_null()) return "-";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
  if (v.is_number_float()) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << v.get<double>();
    return os.str();
  }
  return v.dump();
}

using Renderer = std::function<void(const json&, std::ostream&)>;

// Shared tail of every client subcommand.
int finish(const Globals& g, const HttpResult& r, std::ostream& out, std::ostream& err,
           const Renderer& render) {
  if (!r.reached) {
    err << "error: cannot reach " << g.api_url << ": " << r.transport_error << "\n";
    return kExitTransport;
  }
  const bool ok = r.status >= 200 && r.status < 300;
  if (g.json) {
    out << r.body;
  } else if (ok) {
    try {
      render(json::parse(r.body), out);
    } catch (const json::exception& e) {
      err << "error: unexpected response: " << e.what() << "\n";
      return kExitServerError;
    }
  }
  if (ok) return kExitOk;

  std::string message = r.body;
  try {
    const auto j = json::parse(r.body);
    if (j.contains("message")) message = j["message"].get<std::string>();
  } catch (const json::exception&) {
  }
  err << "error: " << message << " (HTTP " << r.status << ")\n";
  return r.status >= 400 && r.status < 500 ? kExitClientError : kExitServerError;
}

std::string with_query(const std::string& path,
                       const std::vector<std::pair<std::string, std::optional<std::int64_t>>>& q) {
  std::string target = path;
  char sep = '?';
  for (const auto& [k, v] : q) {
    if (!v) continue;
    target += sep + k + "=" + std::to_string(*v);
    sep = '&';
  }
  return target;
}

void render_nodes(const json& arr, std::ostream& out) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& n : arr) {
    const auto& r = n["relay"];
    rows.push_back({str(n["id"]), str(n["power"]), str(n["casing"]), str(n["block"]),
                    str(n["owner"]),
                    str(r["mcu"]) + "." + str(r["port"]) + "." + str(r["bit"])});
  }
  out << render_table({"ID", "POWER", "CASING", "BLOCK", "OWNER", "RELAY"}, rows);
}

void render_readings(const json& arr, std::ostream& out) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : arr) {
    rows.push_back({str(r["ts_ms"]), str(r["channel"]), str(r["casing"]), str(r["kind"]),
                    str(r["value"]), str(r["raw_code"])});
  }
  out << render_table({"TS_MS", "CHANNEL", "CASING", "KIND", "VALUE", "RAW"}, rows);
}

void render_policies(const json& arr, std::ostream& out) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& p : arr) {
    rows.push_back({str(p["id"]), str(p["casing"]), str(p["action"]), str(p["threshold_c"]),
                    str(p["enabled"])});
  }
  out << render_table({"ID", "CASING", "ACTION", "THRESHOLD_C", "ENABLED"}, rows);
}

void render_blocks(const json& arr, std::ostream& out) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& b : arr) {
    rows.push_back({str(b["id"]), str(b["owner"]),
                    format_node_list(b["nodes"].get<std::vector<int>>())});
  }
  out << render_table({"ID", "OWNER", "NODES"}, rows);
}

void render_audit(const json& arr, std::ostream& out) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : arr) {
    rows.push_back({str(e["seq"]), str(e["ts_ms"]), str(e["actor"]), str(e["command"]),
                    str(e["node"]), str(e["outcome"]), str(e["detail"])});
  }
  out << render_table({"SEQ", "TS_MS", "ACTOR", "COMMAND", "NODE", "OUTCOME", "DETAIL"}, rows);
}

void render_casings(const json& arr, std::ostream& out) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : arr) {
    const auto& t = c["temperature"];
    const auto& h = c["humidity"];
    rows.push_back({str(c["id"]), format_node_list(c["nodes"].get<std::vector<int>>()),
                    str(c["powered"]), t.is_null() ? "-" : str(t["value"]),
                    h.is_null() ? "-" : str(h["value"]), t.is_null() ? "-" : str(t["ts_ms"])});
  }
  out << render_table({"ID", "NODES", "POWERED", "TEMP_C", "HUMIDITY_RH", "READ_AT_MS"}, rows);
}

void render_health(const json& h, std::ostream& out) {
  for (const auto& [k, v] : h.items()) out << k << ": " << str(v) << "\n";
}

}  // namespace

std::atomic<bool>& stop_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

const std::vector<CommandRoute>& command_routes() {
  static const std::vector<CommandRoute> kRoutes = {
      {"health", "GET", "/api/health"},
      {"nodes list", "GET", "/api/nodes"},
      {"nodes get", "GET", "/api/nodes/{id}"},
      {"node-power", "POST", "/api/nodes/{id}/power"},
      {"casings", "GET", "/api/casings"},
      {"readings", "GET", "/api/readings"},
      {"policies list", "GET", "/api/policies"},
      {"policies set", "PUT", "/api/policies"},
      {"blocks list", "GET", "/api/blocks"},
      {"blocks create", "POST", "/api/blocks"},
      {"audit", "GET", "/api/audit"},
  };
  return kRoutes;
}

std::vector<int> parse_node_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  auto to_int = [](const std::string& s) {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument("bad node number " + s);
    return v;
  };
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      out.push_back(to_int(part));
    } else {
      const int lo = to_int(part.substr(0, dash)), hi = to_int(part.substr(dash + 1));
      if (hi < lo) throw std::invalid_argument("descending range " + part);
      for (int n = lo; n <= hi; ++n) out.push_back(n);
    }
  }
  if (out.empty()) throw std::invalid_argument("empty node list");
  return out;
}

std::string format_node_list(const std::vector<int>& nodes) {
  std::string out;
  for (std::size_t i = 0; i < nodes.size();) {
    std::size_t j = i;
    while (j + 1 < nodes.size() && nodes[j + 1] == nodes[j] + 1) ++j;
    if (!out.empty()) out += ',';
    out += std::to_string(nodes[i]);
    if (j > i) out += "-" + std::to_string(nodes[j]);
    i = j + 1;
  }
  return out.empty() ? "-" : out;
}

std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < width.size(); ++c)
      width[c] = std::max(width[c], r[c].size());

  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    std::string text;
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string cell = c < cells.size() ? cells[c] : "";
      text += cell;
      if (c + 1 < width.size()) text += std::string(width[c] - cell.size() + 2, ' ');
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    os << text << "\n";
  };
  line(header);
  std::vector<std::string> rule;
  for (auto w : width) rule.emplace_back(w, '-');
  line(rule);
  for (const auto& r : rows) line(r);
  return os.str();
}

int run_stack(const StackOptions& opts, const std::atomic<bool>& stop, std::ostream& out,
              std::ostream& err, const std::function<void(int)>& on_ready) {
  ServiceConfig cfg;
  try {
    cfg = opts.config ? load_config(*opts.config) : default_config();
    if (opts.poll_interval_s) {
      if (!(*opts.poll_interval_s > 0.0)) throw ConfigError("--poll-interval: must be > 0");
      cfg.poll_interval = Millis{static_cast<std::int64_t>(*opts.poll_interval_s * 1000.0)};
    }
    if (opts.bind) {
      const auto colon = opts.bind->rfind(':');
      if (colon == std::string::npos) throw ConfigError("--bind: expected host:port");
      cfg.bind_host = opts.bind->substr(0, colon);
      try {
        cfg.bind_port = std::stoi(opts.bind->substr(colon + 1));
      } catch (const std::logic_error&) {
        throw ConfigError("--bind: port is not a number");
      }
    }
    if (opts.data_dir) cfg.data_dir = *opts.data_dir;
    if (opts.time_scale) cfg.time_scale = *opts.time_scale;
    validate(cfg);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    ControlPlane service(cfg);
    HttpServer server(service, cfg.ui_dir);
    const int port = server.start(cfg.bind_host, cfg.bind_port);
    service.start_driver();
    out << "cw: serving http://" << cfg.bind_host << ":" << port << " (" << to_string(cfg.clock_mode)
        << " clock";
    if (cfg.clock_mode == ClockMode::Simulated) out << ", x" << cfg.time_scale;
    out << "; poll every " << cfg.poll_interval.count() / 1000.0 << " s; data in "
        << cfg.data_dir.string() << ")" << std::endl;
    if (on_ready) on_ready(port);
    while (!stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(20));
    server.stop();
    service.stop_driver();
    out << "cw: stopped after " << service.health().cycles << " poll cycles" << std::endl;
  } catch (const BindError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}

int run(int argc, const char* const argv[], std::ostream& out, std::ostream& err) {
  Globals g;
  CLI::App app{"Cluster power and environment control client", "cw"};
  app.require_subcommand(1);
  app.add_option("--api-url", g.api_url, "Daemon base URL")->envname("CW_API_URL");
  app.add_option("--token", g.token, "Bearer token")->envname("CW_TOKEN");
  app.add_flag("--json", g.json, "Print the raw API response body");

  std::function<int()> action;

  auto* nodes = app.add_subcommand("nodes", "Node power states")->require_subcommand(1);
  nodes->add_subcommand("list", "All nodes")->callback([&] {
    action = [&] { return finish(g, call(g, "GET", "/api/nodes"), out, err, render_nodes); };
  });
  int node_id = 0;
  auto* node_get = nodes->add_subcommand("get", "One node");
  node_get->add_option("id", node_id)->required();
  node_get->callback([&] {
    action = [&] {
      return finish(g, call(g, "GET", "/api/nodes/" + std::to_string(node_id)), out, err,
                    [](const json& n, std::ostream& o) { render_nodes(json::array({n}), o); });
    };
  });

  bool power_on = false, power_off = false;
  auto* node_power = app.add_subcommand("node-power", "Switch a node's power relay");
  node_power->add_option("id", node_id)->required();
  auto* on_flag = node_power->add_flag("--on", power_on, "Power on");
  auto* off_flag = node_power->add_flag("--off", power_off, "Power off");
  on_flag->excludes(off_flag);
  node_power->callback([&] {
    action = [&] {
      if (!power_on && !power_off) {
        err << "error: node-power needs --on or --off\n";
        return kExitUsage;
      }
      const json body = {{"on", power_on}};
      return finish(g, call(g, "POST", "/api/nodes/" + std::to_string(node_id) + "/power",
                            body.dump()),
                    out, err, [](const json& r, std::ostream& o) {
                      o << "node " << str(r["node"]["id"]) << " " << str(r["node"]["power"])
                        << " (" << str(r["event"]["outcome"]) << ")\n";
                    });
    };
  });

  app.add_subcommand("casings", "Latest readings per casing")->callback([&] {
    action = [&] { return finish(g, call(g, "GET", "/api/casings"), out, err, render_casings); };
  });

  std::optional<std::int64_t> channel, since, until, last;
  auto* readings = app.add_subcommand("readings", "Stored sensor readings");
  readings->add_option("--channel", channel, "Channel number");
  readings->add_option("--since", since, "From timestamp (ms, inclusive)");
  readings->add_option("--until", until, "To timestamp (ms, inclusive)");
  readings->add_option("--last", last, "Only the newest N")->check(CLI::NonNegativeNumber);
  readings->callback([&] {
    action = [&] {
      const auto target = with_query(
          "/api/readings", {{"channel", channel}, {"since", since}, {"until", until}, {"last", last}});
      return finish(g, call(g, "GET", target), out, err, render_readings);
    };
  });

  auto* policies = app.add_subcommand("policies", "Autonomous policies")->require_subcommand(1);
  policies->add_subcommand("list", "Current policy set")->callback([&] {
    action = [&] { return finish(g, call(g, "GET", "/api/policies"), out, err, render_policies); };
  });
  std::string policy_file;
  auto* policies_set = policies->add_subcommand("set", "Replace the policy set (admin)");
  policies_set->add_option("file", policy_file, "JSON array of policies")->required();
  policies_set->callback([&] {
    action = [&] {
      std::ifstream in(policy_file);
      if (!in) {
        err << "error: cannot read " << policy_file << "\n";
        return kExitUsage;
      }
      std::ostringstream text;
      text << in.rdbuf();
      return finish(g, call(g, "PUT", "/api/policies", text.str()), out, err, render_policies);
    };
  });

  auto* blocks = app.add_subcommand("blocks", "Node blocks and owners")->require_subcommand(1);
  blocks->add_subcommand("list", "All blocks")->callback([&] {
    action = [&] { return finish(g, call(g, "GET", "/api/blocks"), out, err, render_blocks); };
  });
  std::string block_id, block_owner, block_nodes;
  auto* blocks_create = blocks->add_subcommand("create", "Assign nodes to a user (admin)");
  blocks_create->add_option("--id", block_id)->required();
  blocks_create->add_option("--owner", block_owner)->required();
  blocks_create->add_option("--nodes", block_nodes, "e.g. 25-30,33")->required();
  blocks_create->callback([&] {
    action = [&] {
      std::vector<int> ids;
      try {
        ids = parse_node_list(block_nodes);
      } catch (const std::exception& e) {
        err << "error: --nodes: " << e.what() << "\n";
        return kExitUsage;
      }
      const json body = {{"id", block_id}, {"owner", block_owner}, {"nodes", ids}};
      return finish(g, call(g, "POST", "/api/blocks", body.dump()), out, err,
                    [](const json& b, std::ostream& o) { render_blocks(json::array({b}), o); });
    };
  });

  auto* audit = app.add_subcommand("audit", "Power command audit trail");
  audit->add_option("--since", since, "From timestamp (ms, inclusive)");
  audit->add_option("--last", last, "Only the newest N")->check(CLI::NonNegativeNumber);
  audit->callback([&] {
    action = [&] {
      const auto target = with_query("/api/audit", {{"since", since}, {"last", last}});
      return finish(g, call(g, "GET", target), out, err, render_audit);
    };
  });

  app.add_subcommand("health", "Daemon status")->callback([&] {
    action = [&] { return finish(g, call(g, "GET", "/api/health"), out, err, render_health); };
  });

  StackOptions stack_opts;
  std::string config_path, bind, data_dir;
  double poll_interval = 0.0, time_scale = 0.0;
  auto* stack = app.add_subcommand("stack", "Local simulator + daemon")->require_subcommand(1);
  auto* stack_up = stack->add_subcommand("up", "Boot plant, firmware, bus and daemon");
  stack_up->add_option("--config", config_path, "Config file (default: bundled)");
  stack_up->add_option("--poll-interval", poll_interval, "Poll interval override (s)");
  stack_up->add_option("--bind", bind, "host:port override");
  stack_up->add_option("--data-dir", data_dir, "Persistence directory override");
  stack_up->add_option("--time-scale", time_scale, "Simulated seconds per wall second");
  stack_up->callback([&] {
    action = [&] {
      if (!config_path.empty()) stack_opts.config = config_path;
      if (stack_up->count("--poll-interval")) stack_opts.poll_interval_s = poll_interval;
      if (!bind.empty()) stack_opts.bind = bind;
      if (!data_dir.empty()) stack_opts.data_dir = data_dir;
      if (stack_up->count("--time-scale")) stack_opts.time_scale = time_scale;
      return run_stack(stack_opts, stop_flag(), out, err);
    };
  });

  auto* config = app.add_subcommand("config", "Config file helpers")->require_subcommand(1);
  std::string check_path;
  auto* config_check = config->add_subcommand("check", "Validate a config file");
  config_check->add_option("file", check_path)->required();
  config_check->callback([&] {
    action = [&] {
      try {
        const auto cfg = load_config(check_path);
        out << check_path << ": ok (" << cfg.node_count << " nodes, " << cfg.casings.size()
            << " casings, " << cfg.channels.size() << " channels)\n";
        return kExitOk;
      } catch (const ConfigError& e) {
        err << e.what() << "\n";
        return kExitUsage;
      }
    };
  });
  config->add_subcommand("default", "Print the bundled default config")->callback([&] {
    action = [&] {
      out << to_json(default_config()).dump(2) << "\n";
      return kExitOk;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  return action ? action() : kExitUsage;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("cw");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace cw::cli
