#pragma once

// Daemon configuration: topology, sensor chain, policies, blocks, users.
// Loaded from a JSON file; see docs/config.md for the schema.

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cw/clock.hpp"
#include "cw/firmware.hpp"
#include "cw/plant.hpp"

namespace cw {

struct UserAccount {
  std::string name;
  std::string token;
  bool admin = false;
};

// A disjoint set of nodes assigned to one user.
struct Block {
  std::string id;
  std::string owner;
  std::vector<int> node_ids;
};

enum class PolicyAction { ShutdownCasingNodes, AlertOnly, DeactivateIdle };

inline constexpr std::string_view kAllCasings = "*";

struct Policy {
  std::string id;
  std::string casing_id{kAllCasings};
  double threshold_c = 45.0;
  PolicyAction action = PolicyAction::ShutdownCasingNodes;
  bool enabled = true;
  // Poll cycles a fired shutdown stays disarmed for that casing.
  int rearm_cycles = 1;
  // DeactivateIdle only.
  double idle_timeout_s = 3600.0;
};

enum class ClockMode { Simulated, Wall };

struct ServiceConfig {
  int node_count = kNodeCount;
  std::vector<Casing> casings;
  std::vector<ChannelBinding> channels;
  ChainParams chain;
  std::optional<std::vector<RelayAddress>> node_map;

  Millis poll_interval{600'000};
  Millis plant_dt{1'000};
  std::chrono::microseconds bus_timeout{100'000};

  std::vector<Policy> policies;
  std::vector<Block> blocks;
  std::vector<UserAccount> users;

  std::string bind_host = "127.0.0.1";
  int bind_port = 8080;

  ClockMode clock_mode = ClockMode::Simulated;
  // Simulated seconds per wall second when the driver paces the clock.
  double time_scale = 60.0;

  std::filesystem::path data_dir = "cw-data";
  std::optional<std::filesystem::path> ui_dir;
};

// Bundled default: 48 nodes in 4 casings of 12, 8 channels, one overheat
// policy at 45 degC, an admin account and two block owners.
ServiceConfig default_config();

// Throws ConfigError. Syntax errors carry "name:line:col:", semantic errors
// the JSON pointer of the offending field.
ServiceConfig parse_config(std::string_view text, std::string_view source_name = "<config>");
ServiceConfig load_config(const std::filesystem::path& path);

// Cross-field checks (partition, disjoint blocks, known owners...).
void validate(const ServiceConfig& cfg);

nlohmann::json to_json(const ServiceConfig& cfg);

nlohmann::json to_json(const Policy& p);
nlohmann::json to_json(const Block& b);
// `where` prefixes error messages (a JSON pointer). Throw ConfigError.
Policy policy_from_json(const nlohmann::json& j, const std::string& where = "");
Block block_from_json(const nlohmann::json& j, const std::string& where = "");

std::string to_string(PolicyAction a);
std::string to_string(ClockMode m);

// Checks a policy set against a topology; throws ConfigError.
void validate_policies(const std::vector<Policy>& policies, const std::vector<Casing>& casings,
                       const std::string& where = "/policies");

// Blocks must be pairwise disjoint, in range and owned by a known user.
void validate_blocks(const std::vector<Block>& blocks, const std::vector<UserAccount>& users,
                     int node_count, const std::string& where = "/blocks");

}  // namespace cw
