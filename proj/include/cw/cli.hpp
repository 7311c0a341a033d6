#pragma once

// Operator client for the daemon's HTTP API, plus `stack up`, which boots
// plant, firmware, bus and daemon in one process.
//
// Exit codes: 0 on 2xx, 1 usage or local error, 2 on 4xx, 3 when the
// daemon cannot be reached, 4 on 5xx.

#include <atomic>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace cw::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitClientError = 2;
inline constexpr int kExitTransport = 3;
inline constexpr int kExitServerError = 4;

inline constexpr const char* kDefaultApiUrl = "http://127.0.0.1:8080";

int run(int argc, const char* const argv[], std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Set from a signal handler to make `stack up` shut down.
std::atomic<bool>& stop_flag();

struct CommandRoute {
  std::string command;
  std::string method;
  std::string path;
};

// Which API route each client subcommand calls.
const std::vector<CommandRoute>& command_routes();

struct StackOptions {
  std::optional<std::filesystem::path> config;
  std::optional<double> poll_interval_s;
  std::optional<std::string> bind;
  std::optional<std::filesystem::path> data_dir;
  std::optional<double> time_scale;
};

// Runs until `stop` turns true. on_ready gets the bound port once the API is
// live. Returns an exit code; config problems print diagnostics to err.
int run_stack(const StackOptions& opts, const std::atomic<bool>& stop, std::ostream& out,
              std::ostream& err, const std::function<void(int)>& on_ready = {});

// "1-12,14" -> {1..12, 14}. Throws std::invalid_argument.
std::vector<int> parse_node_list(const std::string& text);
// Inverse, collapsing runs: {1,2,3,5} -> "1-3,5".
std::string format_node_list(const std::vector<int>& nodes);

// Plain ASCII table, columns left-aligned, two-space gutter.
std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows);

}  // namespace cw::cli
