#include "cw/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "cw/errors.hpp"

namespace cw {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ConfigError((where.empty() ? std::string("/") : where) + ": " + what);
}

// Reads one JSON object, remembering which keys were consumed so that
// typos surface as unknown fields.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_ + "/" + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return convert<T>(j_.at(key), at(key));
  }

  template <class T>
  T required(const std::string& key) {
    if (!has(key)) fail(at(key), "required field missing");
    return convert<T>(j_.at(key), at(key));
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) fail(at(key), "unknown field");
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(where, "expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) fail(where, "expected an integer");
      return v.get<int>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) fail(where, "expected a number");
      const double d = v.get<double>();
      if (!std::isfinite(d)) fail(where, "expected a finite number");
      return d;
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(where, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      if (!v.is_array()) fail(where, "expected an array of integers");
      std::vector<int> out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<int>(v[i], where + "/" + std::to_string(i)));
      }
      return out;
    } else {
      static_assert(sizeof(T) == 0, "unsupported field type");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const json& array_field(Fields& f, const std::string& key) {
  const json& v = f.raw(key);
  if (!v.is_array()) fail(f.at(key), "expected an array");
  return v;
}

Millis seconds_to_ms(double s, const std::string& where) {
  if (!(s > 0.0)) fail(where, "must be > 0");
  return Millis{static_cast<std::int64_t>(std::llround(s * 1000.0))};
}

SensorKind parse_kind(const std::string& s, const std::string& where) {
  if (s == "temperature") return SensorKind::TemperatureC;
  if (s == "humidity") return SensorKind::HumidityRH;
  fail(where, "kind must be \"temperature\" or \"humidity\"");
}

PolicyAction parse_action(const std::string& s, const std::string& where) {
  if (s == "shutdown_casing_nodes") return PolicyAction::ShutdownCasingNodes;
  if (s == "alert_only") return PolicyAction::AlertOnly;
  if (s == "deactivate_idle") return PolicyAction::DeactivateIdle;
  fail(where, "action must be shutdown_casing_nodes, alert_only or deactivate_idle");
}

Mcu parse_mcu(const std::string& s, const std::string& where) {
  if (s == "A") return Mcu::A;
  if (s == "B") return Mcu::B;
  fail(where, "mcu must be \"A\" or \"B\"");
}

OutPort parse_port(const std::string& s, const std::string& where) {
  if (s == "P0") return OutPort::P0;
  if (s == "P2") return OutPort::P2;
  if (s == "P3") return OutPort::P3;
  fail(where, "port must be P0, P2 or P3");
}

// 1-based line and column of a byte offset.
std::pair<std::size_t, std::size_t> line_col(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

std::string to_string(PolicyAction a) {
  switch (a) {
    case PolicyAction::ShutdownCasingNodes: return "shutdown_casing_nodes";
    case PolicyAction::AlertOnly: return "alert_only";
    case PolicyAction::DeactivateIdle: return "deactivate_idle";
  }
  return "?";
}

std::string to_string(ClockMode m) { return m == ClockMode::Simulated ? "simulated" : "wall"; }

Policy policy_from_json(const json& j, const std::string& where) {
  Fields f(j, where);
  Policy p;
  p.id = f.required<std::string>("id");
  if (p.id.empty()) fail(f.at("id"), "must not be empty");
  p.casing_id = f.get<std::string>("casing", std::string(kAllCasings));
  p.threshold_c = f.get<double>("threshold_c", p.threshold_c);
  if (f.has("action")) p.action = parse_action(f.required<std::string>("action"), f.at("action"));
  p.enabled = f.get<bool>("enabled", p.enabled);
  p.rearm_cycles = f.get<int>("rearm_cycles", p.rearm_cycles);
  p.idle_timeout_s = f.get<double>("idle_timeout_s", p.idle_timeout_s);
  f.finish();
  if (p.threshold_c < 0.0 || p.threshold_c > 100.0) {
    fail(f.at("threshold_c"), "must be within the sensor range 0-100");
  }
  if (p.rearm_cycles < 0) fail(f.at("rearm_cycles"), "must be >= 0");
  if (!(p.idle_timeout_s > 0.0)) fail(f.at("idle_timeout_s"), "must be > 0");
  return p;
}

json to_json(const Policy& p) {
  json j = {{"id", p.id},
            {"casing", p.casing_id},
            {"threshold_c", p.threshold_c},
            {"action", to_string(p.action)},
            {"enabled", p.enabled},
            {"rearm_cycles", p.rearm_cycles}};
  if (p.action == PolicyAction::DeactivateIdle) j["idle_timeout_s"] = p.idle_timeout_s;
  return j;
}

Block block_from_json(const json& j, const std::string& where) {
  Fields f(j, where);
  Block b;
  b.id = f.required<std::string>("id");
  if (b.id.empty()) fail(f.at("id"), "must not be empty");
  b.owner = f.required<std::string>("owner");
  b.node_ids = f.required<std::vector<int>>("nodes");
  f.finish();
  return b;
}

json to_json(const Block& b) { return {{"id", b.id}, {"owner", b.owner}, {"nodes", b.node_ids}}; }

void validate_policies(const std::vector<Policy>& policies, const std::vector<Casing>& casings,
                       const std::string& where) {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < policies.size(); ++i) {
    const auto& p = policies[i];
    const auto at = where + "/" + std::to_string(i);
    if (!ids.insert(p.id).second) fail(at + "/id", "duplicate policy id " + p.id);
    if (p.casing_id != kAllCasings &&
        std::none_of(casings.begin(), casings.end(),
                     [&](const Casing& c) { return c.id == p.casing_id; })) {
      fail(at + "/casing", "unknown casing " + p.casing_id);
    }
    if (p.threshold_c < 0.0 || p.threshold_c > 100.0) {
      fail(at + "/threshold_c", "must be within the sensor range 0-100");
    }
  }
}

void validate_blocks(const std::vector<Block>& blocks, const std::vector<UserAccount>& users,
                     int node_count, const std::string& where) {
  std::vector<std::string> owner_of(static_cast<std::size_t>(node_count) + 1);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const auto at = where + "/" + std::to_string(i);
    if (!ids.insert(b.id).second) fail(at + "/id", "duplicate block id " + b.id);
    if (std::none_of(users.begin(), users.end(),
                     [&](const UserAccount& u) { return u.name == b.owner; })) {
      fail(at + "/owner", "unknown user " + b.owner);
    }
    for (std::size_t k = 0; k < b.node_ids.size(); ++k) {
      const int n = b.node_ids[k];
      const auto node_at = at + "/nodes/" + std::to_string(k);
      if (n < 1 || n > node_count) fail(node_at, "node " + std::to_string(n) + " out of range");
      auto& slot = owner_of[static_cast<std::size_t>(n)];
      if (!slot.empty()) {
        fail(node_at, "node " + std::to_string(n) + " overlaps block " + slot);
      }
      slot = b.id;
    }
  }
}

void validate(const ServiceConfig& cfg) {
  if (cfg.node_count < 1 || cfg.node_count > kNodeCount) fail("/node_count", "must be 1-48");
  try {
    Plant(cfg.casings, cfg.channels, cfg.node_count);
  } catch (const ChannelError& e) {
    fail("/channels", e.what());
  } catch (const RangeError& e) {
    fail("/casings", e.what());
  }
  try {
    std::vector<SensorKind> kinds(cfg.channels.size(), SensorKind::TemperatureC);
    for (const auto& b : cfg.channels) {
      if (b.channel >= static_cast<int>(kinds.size())) {
        fail("/channels", "channels must be numbered 0..n-1 without gaps");
      }
      kinds[static_cast<std::size_t>(b.channel)] = b.kind;
    }
    SensorChain(cfg.chain, kinds);
  } catch (const RangeError& e) {
    fail("/sensor_chain", e.what());
  }
  if (cfg.node_map) {
    try {
      NodeMap{*cfg.node_map};
    } catch (const RangeError& e) {
      fail("/node_map", e.what());
    }
  }
  if (cfg.poll_interval <= Millis{0}) fail("/poll_interval_s", "must be > 0");
  if (cfg.plant_dt <= Millis{0}) fail("/plant_dt_s", "must be > 0");
  if (cfg.plant_dt > cfg.poll_interval) fail("/plant_dt_s", "must not exceed poll_interval_s");
  if (cfg.bus_timeout <= std::chrono::microseconds{0}) fail("/bus_timeout_ms", "must be > 0");

  std::set<std::string> names, tokens;
  for (std::size_t i = 0; i < cfg.users.size(); ++i) {
    const auto& u = cfg.users[i];
    const auto at = "/users/" + std::to_string(i);
    if (u.name.empty()) fail(at + "/name", "must not be empty");
    if (u.name == "policy-engine") fail(at + "/name", "reserved name");
    if (u.token.empty()) fail(at + "/token", "must not be empty");
    if (!names.insert(u.name).second) fail(at + "/name", "duplicate user " + u.name);
    if (!tokens.insert(u.token).second) fail(at + "/token", "token reused");
  }
  validate_blocks(cfg.blocks, cfg.users, cfg.node_count);
  validate_policies(cfg.policies, cfg.casings);

  if (cfg.bind_port < 0 || cfg.bind_port > 65535) fail("/bind", "port out of range");
  if (!(cfg.time_scale > 0.0)) fail("/clock/time_scale", "must be > 0");
}

ServiceConfig default_config() {
  ServiceConfig cfg;
  auto plant = Plant::default_topology();
  cfg.casings = plant.casings();
  cfg.channels = plant.bindings();
  cfg.policies.push_back(Policy{"overheat", std::string(kAllCasings), 45.0,
                                PolicyAction::ShutdownCasingNodes, true, 1, 3600.0});
  cfg.users = {{"admin", "admin-token", true},
               {"alice", "alice-token", false},
               {"bob", "bob-token", false}};
  std::vector<int> a, b;
  for (int n = 1; n <= 12; ++n) a.push_back(n);
  for (int n = 13; n <= 24; ++n) b.push_back(n);
  cfg.blocks = {{"block-a", "alice", a}, {"block-b", "bob", b}};
  return cfg;
}

ServiceConfig parse_config(std::string_view text, std::string_view source_name) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    std::ostringstream msg;
    msg << source_name << ":" << line << ":" << col << ": " << e.what();
    throw ConfigError(msg.str());
  }

  ServiceConfig cfg = default_config();
  try {
    Fields f(root, "");
    cfg.node_count = f.get<int>("node_count", cfg.node_count);

    if (f.has("casings")) {
      cfg.casings.clear();
      const auto& arr = array_field(f, "casings");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Fields c(arr[i], "/casings/" + std::to_string(i));
        Casing casing;
        casing.id = c.required<std::string>("id");
        casing.node_ids = c.required<std::vector<int>>("nodes");
        casing.ambient_c = c.get<double>("ambient_c", casing.ambient_c);
        casing.temp_c = c.get<double>("initial_temp_c", casing.ambient_c);
        casing.humidity_rh = c.get<double>("humidity_rh", casing.humidity_rh);
        casing.humidity_drift_rh_per_s =
            c.get<double>("humidity_drift_rh_per_s", casing.humidity_drift_rh_per_s);
        casing.tau_s = c.get<double>("tau_s", casing.tau_s);
        casing.k_c_per_node = c.get<double>("k_c_per_node", casing.k_c_per_node);
        c.finish();
        if (!(casing.tau_s > 0.0)) fail(c.at("tau_s"), "must be > 0");
        if (casing.k_c_per_node < 0.0) fail(c.at("k_c_per_node"), "must be >= 0");
        if (casing.humidity_rh < 0.0 || casing.humidity_rh > 100.0) {
          fail(c.at("humidity_rh"), "must be within 0-100");
        }
        cfg.casings.push_back(std::move(casing));
      }
    }

    if (f.has("channels")) {
      cfg.channels.clear();
      const auto& arr = array_field(f, "channels");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Fields c(arr[i], "/channels/" + std::to_string(i));
        ChannelBinding b;
        b.channel = c.required<int>("channel");
        b.casing_id = c.required<std::string>("casing");
        b.kind = parse_kind(c.required<std::string>("kind"), c.at("kind"));
        c.finish();
        cfg.channels.push_back(std::move(b));
      }
    }

    if (f.has("sensor_chain")) {
      Fields c(f.raw("sensor_chain"), "/sensor_chain");
      cfg.chain.gain = c.get<double>("gain", cfg.chain.gain);
      cfg.chain.vref = c.get<double>("vref", cfg.chain.vref);
      cfg.chain.rail = c.get<double>("rail", cfg.chain.rail);
      cfg.chain.adc_bits = c.get<int>("adc_bits", cfg.chain.adc_bits);
      c.finish();
    }

    if (f.has("node_map")) {
      const auto& arr = array_field(f, "node_map");
      std::vector<RelayAddress> addrs;
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Fields c(arr[i], "/node_map/" + std::to_string(i));
        RelayAddress a{parse_mcu(c.required<std::string>("mcu"), c.at("mcu")),
                       parse_port(c.required<std::string>("port"), c.at("port")),
                       c.required<int>("bit")};
        c.finish();
        addrs.push_back(a);
      }
      cfg.node_map = std::move(addrs);
    }

    if (f.has("poll_interval_s")) {
      cfg.poll_interval = seconds_to_ms(f.required<double>("poll_interval_s"), "/poll_interval_s");
    }
    if (f.has("plant_dt_s")) {
      cfg.plant_dt = seconds_to_ms(f.required<double>("plant_dt_s"), "/plant_dt_s");
    }
    if (f.has("bus_timeout_ms")) {
      const double ms = f.required<double>("bus_timeout_ms");
      if (!(ms > 0.0)) fail("/bus_timeout_ms", "must be > 0");
      cfg.bus_timeout = std::chrono::microseconds{std::llround(ms * 1000.0)};
    }

    if (f.has("policies")) {
      cfg.policies.clear();
      const auto& arr = array_field(f, "policies");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        cfg.policies.push_back(policy_from_json(arr[i], "/policies/" + std::to_string(i)));
      }
    }
    if (f.has("blocks")) {
      cfg.blocks.clear();
      const auto& arr = array_field(f, "blocks");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        cfg.blocks.push_back(block_from_json(arr[i], "/blocks/" + std::to_string(i)));
      }
    }
    if (f.has("users")) {
      cfg.users.clear();
      const auto& arr = array_field(f, "users");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Fields u(arr[i], "/users/" + std::to_string(i));
        cfg.users.push_back({u.required<std::string>("name"), u.required<std::string>("token"),
                             u.get<bool>("admin", false)});
        u.finish();
      }
    }

    if (f.has("bind")) {
      const auto bind = f.required<std::string>("bind");
      const auto colon = bind.rfind(':');
      if (colon == std::string::npos) fail("/bind", "expected host:port");
      cfg.bind_host = bind.substr(0, colon);
      try {
        std::size_t used = 0;
        cfg.bind_port = std::stoi(bind.substr(colon + 1), &used);
        if (used != bind.size() - colon - 1) throw std::invalid_argument("trailing");
      } catch (const std::logic_error&) {
        fail("/bind", "port is not a number");
      }
    }

    if (f.has("clock")) {
      Fields c(f.raw("clock"), "/clock");
      const auto mode = c.get<std::string>("mode", to_string(cfg.clock_mode));
      if (mode == "simulated") {
        cfg.clock_mode = ClockMode::Simulated;
      } else if (mode == "wall") {
        cfg.clock_mode = ClockMode::Wall;
      } else {
        fail(c.at("mode"), "must be \"simulated\" or \"wall\"");
      }
      cfg.time_scale = c.get<double>("time_scale", cfg.time_scale);
      c.finish();
    }

    cfg.data_dir = f.get<std::string>("data_dir", cfg.data_dir.string());
    if (f.has("ui_dir")) cfg.ui_dir = f.required<std::string>("ui_dir");
    f.finish();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(source_name) + ": " + e.what());
  }

  try {
    validate(cfg);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(source_name) + ": " + e.what());
  }
  return cfg;
}

ServiceConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

json to_json(const ServiceConfig& cfg) {
  json j;
  j["node_count"] = cfg.node_count;
  auto& casings = j["casings"] = json::array();
  for (const auto& c : cfg.casings) {
    casings.push_back({{"id", c.id},
                       {"nodes", c.node_ids},
                       {"ambient_c", c.ambient_c},
                       {"initial_temp_c", c.temp_c},
                       {"humidity_rh", c.humidity_rh},
                       {"humidity_drift_rh_per_s", c.humidity_drift_rh_per_s},
                       {"tau_s", c.tau_s},
                       {"k_c_per_node", c.k_c_per_node}});
  }
  auto& channels = j["channels"] = json::array();
  for (const auto& b : cfg.channels) {
    channels.push_back({{"channel", b.channel}, {"casing", b.casing_id}, {"kind", to_string(b.kind)}});
  }
  j["sensor_chain"] = {{"gain", cfg.chain.gain},
                       {"vref", cfg.chain.vref},
                       {"rail", cfg.chain.rail},
                       {"adc_bits", cfg.chain.adc_bits}};
  if (cfg.node_map) {
    auto& map = j["node_map"] = json::array();
    for (const auto& a : *cfg.node_map) {
      map.push_back({{"mcu", to_string(a.mcu)}, {"port", to_string(a.port)}, {"bit", a.bit}});
    }
  }
  j["poll_interval_s"] = static_cast<double>(cfg.poll_interval.count()) / 1000.0;
  j["plant_dt_s"] = static_cast<double>(cfg.plant_dt.count()) / 1000.0;
  j["bus_timeout_ms"] = static_cast<double>(cfg.bus_timeout.count()) / 1000.0;
  auto& policies = j["policies"] = json::array();
  for (const auto& p : cfg.policies) policies.push_back(to_json(p));
  auto& blocks = j["blocks"] = json::array();
  for (const auto& b : cfg.blocks) blocks.push_back(to_json(b));
  auto& users = j["users"] = json::array();
  for (const auto& u : cfg.users) {
    users.push_back({{"name", u.name}, {"token", u.token}, {"admin", u.admin}});
  }
  j["bind"] = cfg.bind_host + ":" + std::to_string(cfg.bind_port);
  j["clock"] = {{"mode", to_string(cfg.clock_mode)}, {"time_scale", cfg.time_scale}};
  j["data_dir"] = cfg.data_dir.string();
  if (cfg.ui_dir) j["ui_dir"] = cfg.ui_dir->string();
  return j;
}

}  // namespace cw
