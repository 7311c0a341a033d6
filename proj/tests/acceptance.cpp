// Acceptance gate. One line per criterion; exit status is the failure count.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cw/command.hpp"
#include "cw/errors.hpp"
#include "cw/firmware.hpp"
#include "cw/port_bus.hpp"
#include "cw/service.hpp"
#include "cw/store.hpp"
#include "test_util.hpp"

using namespace cw;
using cw::testing::TempDir;
using cw::testing::test_config;

namespace {

// A criterion returns an empty string on success, otherwise what went wrong.
struct Criterion {
  std::string name;
  double limit_s;
  std::function<std::string()> check;
};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string pin_table_fidelity() {
  struct Row {
    int d25;
    int centronics;  // 0 for the ground span
    const char* signal;
    const char* dir;
    const char* reg;
  };
  // Transcribed row by row from the connector table.
  const std::vector<Row> rows = {
      {1, 1, "NStrobe", "In/Out", "Control"},   {2, 2, "Data 0", "Out", "Data"},
      {3, 3, "Data 1", "Out", "Data"},          {4, 4, "Data 2", "Out", "Data"},
      {5, 5, "Data 3", "Out", "Data"},          {6, 6, "Data 4", "Out", "Data"},
      {7, 7, "Data 5", "Out", "Data"},          {8, 8, "Data 6", "Out", "Data"},
      {9, 9, "Data 7", "Out", "Data"},          {10, 10, "NAck", "In", "Status"},
      {11, 11, "Busy", "In", "Status"},         {12, 12, "Paper Out", "In", "Status"},
      {13, 13, "Select", "In", "Status"},       {14, 14, "nAuto-Linefeed", "In/Out", "Control"},
      {15, 32, "nError / nFault", "In", "Status"},
      {16, 31, "nInitialize", "In/Out", "Control"},
      {17, 36, "nSelect-Printer / nSelect-In", "In/Out", "Control"},
  };
  std::map<std::string, int> regs;
  for (int pin = 1; pin <= 25; ++pin) {
    const auto p = pin_lookup(pin);
    if (p.pin_d25 != pin) return fmt("pin %d reports d25=%d", pin, p.pin_d25);
    regs[std::string(to_string(p.reg))]++;
    if (pin >= 18) {
      if (p.signal != Signal::Ground || p.direction != PinDirection::Gnd ||
          p.reg != Register::Ground || p.pin_centronics) {
        return fmt("pin %d is not a plain ground", pin);
      }
      continue;
    }
    const Row& r = rows[static_cast<std::size_t>(pin - 1)];
    if (p.pin_centronics != std::optional<int>{r.centronics}) {
      return fmt("pin %d centronics mismatch", pin);
    }
    if (lower(to_string(p.signal)) != lower(r.signal)) return fmt("pin %d signal mismatch", pin);
    if (to_string(p.direction) != r.dir) return fmt("pin %d direction mismatch", pin);
    if (to_string(p.reg) != r.reg) return fmt("pin %d register mismatch", pin);
  }
  const std::map<std::string, int> expected = {
      {"Data", 8}, {"Status", 5}, {"Control", 4}, {"Ground", 8}};
  if (regs != expected) return "register multiset differs";
  for (int bad : {0, 26}) {
    try {
      pin_lookup(bad);
      return fmt("pin %d accepted", bad);
    } catch (const RangeError&) {
    }
  }
  return "";
}

std::string command_codec() {
  int valid = 0;
  for (int b = 0; b < 256; ++b) {
    const auto raw = static_cast<std::uint8_t>(b);
    const Command c = decode_command(raw);
    Command want;
    if (b >= 1 && b <= 48) {
      want = PowerOn{b};
    } else if (b >= 129 && b <= 176) {
      want = PowerOff{b - 128};
    } else if (b >= 200 && b <= 215) {
      want = ReadSensor{b - 200};
    } else {
      want = Invalid{raw};
    }
    if (c != want) return fmt("byte %d decodes to %s", b, to_string(c).c_str());
    if (std::holds_alternative<Invalid>(c)) continue;
    ++valid;
    if (encode_command(c) != raw) return fmt("byte %d does not round-trip", b);
  }
  if (valid != 112) return fmt("%d valid bytes, want 112", valid);
  if (decode_command(1) != Command{PowerOn{1}}) return "anchor 1 -> PowerOn(1) broken";
  if (decode_command(129) != Command{PowerOff{1}}) return "anchor 129 -> PowerOff(1) broken";
  return "";
}

std::string node_control() {
  struct NoInputs : AnalogInputs {
    double channel_value(int) const override { return 0.0; }
  } inputs;
  SimClock clock;
  FirmwareBoard board(NodeMap::fill_order(), SensorChain{}, inputs);
  ParallelBus bus(board, clock);
  RelayMatrix prev = board.relays();
  if (prev != RelayMatrix::all_open()) return "board does not start all open";
  auto step = [&](Command c) -> std::string {
    bus.transact(c);
    const RelayMatrix now = board.relays();
    if (hamming_distance(prev, now) != 1) return "transition for " + to_string(c) + " is not 1 bit";
    prev = now;
    return "";
  };
  for (int n = 1; n <= kNodeCount; ++n) {
    if (auto e = step(PowerOn{n}); !e.empty()) return e;
  }
  if (prev != RelayMatrix::all_closed()) return "not all closed after 48 PowerOn";
  for (int n = 1; n <= kNodeCount; ++n) {
    if (auto e = step(PowerOff{n}); !e.empty()) return e;
  }
  if (prev != RelayMatrix::all_open()) return "relays not all open at the end";
  if (bus.transaction_count() != 96) return "expected 96 bus transactions";
  return "";
}

std::string sensor_chain() {
  struct Fixed : AnalogInputs {
    double t = 0.0;
    double channel_value(int) const override { return t; }
  } plant;
  const ChainParams params;
  const SensorChain chain(params, {SensorKind::TemperatureC});
  double worst = 0.0;
  for (int i = 0; i <= 2000; ++i) {
    plant.t = 100.0 * i / 2000.0;
    const double err = std::abs(decode_reading(sensor_step(chain, 0, plant), params) - plant.t);
    worst = std::max(worst, err);
  }
  if (worst > 0.197) return fmt("max error %.4f C", worst);
  plant.t = 0.0;
  if (sensor_step(chain, 0, plant) != 0) return "0 C is not code 0";
  plant.t = 100.0;
  if (sensor_step(chain, 0, plant) != 255) return "100 C is not code 255";
  return "";
}

std::string autonomous_shutdown() {
  TempDir dir;
  auto cfg = test_config(dir.path());
  // 25 + 12 * 2 = 49 C steady state, above the 45 C overheat threshold.
  cfg.casings[0].k_c_per_node = 2.0;
  const std::string casing = cfg.casings[0].id;
  const double threshold = cfg.policies.at(0).threshold_c;
  const double ambient = cfg.casings[0].ambient_c;
  ControlPlane svc(cfg);
  const User admin{"admin", true};
  const auto nodes = cfg.casings[0].node_ids;
  for (int n : nodes) {
    if (svc.submit_power_command(admin, n, true).outcome != Outcome::Applied) {
      return "could not power node " + std::to_string(n);
    }
  }
  const int temp_channel = [&] {
    for (const auto& b : cfg.channels) {
      if (b.casing_id == casing && b.kind == SensorKind::TemperatureC) return b.channel;
    }
    return -1;
  }();
  if (temp_channel < 0) return "no temperature channel for " + casing;

  int trip_cycle = -1;
  for (int cycle = 0; cycle < 20 && trip_cycle < 0; ++cycle) {
    svc.run_cycles(1);
    ReadingQuery q;
    q.channel = temp_channel;
    q.last = 1;
    const auto latest = svc.query_readings(q);
    if (!latest.empty() && latest[0].value >= threshold) trip_cycle = cycle;
  }
  if (trip_cycle < 0) return "casing never reached the threshold";
  // The cycle that produced the reading has finished, so the policy has run.
  for (int n : nodes) {
    if (svc.node(n).on) return fmt("node %d still on after the tripping cycle", n);
  }
  double prev_truth = svc.casings()[0].plant_temp_c;
  double prev_reading = 1e9;
  for (int i = 0; i < 10; ++i) {
    svc.run_cycles(1);
    const auto c = svc.casings()[0];
    if (!(c.plant_temp_c < prev_truth)) return fmt("plant temperature rose in cycle %d", i + 1);
    if (!(c.plant_temp_c > ambient)) return "temperature overshot ambient";
    if (!c.temperature || c.temperature->value > prev_reading) {
      return fmt("reading rose in cycle %d", i + 1);
    }
    prev_truth = c.plant_temp_c;
    prev_reading = c.temperature->value;
  }
  return "";
}

std::string poll_cadence() {
  TempDir dir;
  const auto cfg = default_config();
  auto local = test_config(dir.path());
  ControlPlane svc(local);
  svc.run_cycles(12);
  const auto starts = svc.cycle_starts();
  if (starts.size() != 12) return "wrong cycle count";
  if (starts[0] != Millis{0}) return "first cycle not at t=0";
  for (std::size_t i = 1; i < starts.size(); ++i) {
    const auto period = starts[i] - starts[i - 1];
    if (std::abs((period - Millis{600'000}).count()) > cfg.plant_dt.count()) {
      return fmt("period %lld ms", static_cast<long long>(period.count()));
    }
  }
  return "";
}

std::string acl_soundness() {
  std::mt19937 rng(0xC0FFEE);
  const std::vector<User> users = {
      {"admin", true}, {"alice", false}, {"bob", false}, {"carol", false}};
  int sequences = 0;
  long transactions = 0;
  long denied = 0;
  std::string violation;
  for (int round = 0; round < 10 && violation.empty(); ++round) {
    TempDir dir;
    auto cfg = test_config(dir.path());
    cfg.users.push_back({"carol", "carol-token", false});
    // Random block layout per round: each node goes to alice, bob, carol or nobody.
    std::map<int, std::string> owner;
    cfg.blocks.clear();
    std::map<std::string, std::vector<int>> by_user;
    for (int n = 1; n <= kNodeCount; ++n) {
      const int pick = std::uniform_int_distribution<int>(0, 3)(rng);
      if (pick == 3) continue;
      const std::string who = users[static_cast<std::size_t>(pick + 1)].name;
      owner[n] = who;
      by_user[who].push_back(n);
    }
    for (const auto& [who, ns] : by_user) cfg.blocks.push_back({"blk-" + who, who, ns});

    ControlPlane svc(cfg);
    const User* issuer = nullptr;
    svc.set_bus_observer([&](const BusTransaction& tx) {
      const Command c = decode_command(tx.command);
      if (!is_power_command(c) || !issuer || issuer->admin) return;
      ++transactions;
      const int node = command_node(c);
      const auto it = owner.find(node);
      if (violation.empty() && (it == owner.end() || it->second != issuer->name)) {
        violation = issuer->name + " reached node " + std::to_string(node);
      }
    });
    for (int s = 0; s < 100; ++s, ++sequences) {
      const int len = std::uniform_int_distribution<int>(1, 12)(rng);
      for (int i = 0; i < len; ++i) {
        issuer = &users[std::uniform_int_distribution<std::size_t>(0, users.size() - 1)(rng)];
        const int node = std::uniform_int_distribution<int>(1, kNodeCount)(rng);
        const bool on = std::bernoulli_distribution(0.5)(rng);
        denied += svc.submit_power_command(*issuer, node, on).outcome == Outcome::Denied;
      }
    }
  }
  if (!violation.empty()) return violation;
  if (sequences < 1000) return "too few sequences";
  if (transactions == 0 || denied == 0) return "generator did not exercise both paths";
  return "";
}

std::string durability() {
  TempDir dir;
  int fds[2];
  if (::pipe(fds) != 0) return "pipe failed";
  const pid_t child = ::fork();
  if (child < 0) return "fork failed";
  if (child == 0) {
    ::close(fds[0]);
    {
      ControlPlane svc(test_config(dir.path()));
      svc.run_cycles(3);
      const char done = 1;
      if (::write(fds[1], &done, 1) != 1) ::_exit(2);
      for (;;) ::pause();
    }
  }
  ::close(fds[1]);
  char done = 0;
  const bool signalled = ::read(fds[0], &done, 1) == 1;
  ::close(fds[0]);
  ::kill(child, SIGKILL);
  int status = 0;
  ::waitpid(child, &status, 0);
  if (!signalled) return "daemon child died before finishing 3 cycles";
  if (!WIFSIGNALED(status) || WTERMSIG(status) != SIGKILL) return "child was not killed";

  ControlPlane again(test_config(dir.path()));
  const auto all = again.query_readings({});
  if (all.size() != 24) return fmt("%zu readings after restart, want 24", all.size());
  for (std::size_t i = 1; i < all.size(); ++i) {
    if (all[i].ts < all[i - 1].ts) return "readings out of time order";
  }
  for (int ch = 0; ch < 8; ++ch) {
    ReadingQuery q;
    q.channel = ch;
    const auto rs = again.query_readings(q);
    if (rs.size() != 3) return fmt("channel %d has %zu readings", ch, rs.size());
    for (std::size_t i = 0; i < 3; ++i) {
      if (rs[i].ts != Millis{600'000 * static_cast<long>(i)}) return "unexpected timestamp";
    }
  }
  return "";
}

}  // namespace

int main() {
  // Durability forks, so it runs before anything else has started threads.
  const std::vector<Criterion> criteria = {
      {"durability: 24 readings survive SIGKILL", 5.0, durability},
      {"connector pin table", 1.0, pin_table_fidelity},
      {"command codec", 1.0, command_codec},
      {"48-node control", 1.0, node_control},
      {"sensor-chain accuracy", 1.0, sensor_chain},
      {"autonomous shutdown", 5.0, autonomous_shutdown},
      {"poll cadence", 1.0, poll_cadence},
      {"ACL soundness", 10.0, acl_soundness},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string problem;
    try {
      problem = c.check();
    } catch (const std::exception& e) {
      problem = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (problem.empty() && secs > c.limit_s) problem = fmt("took longer than %.0f s", c.limit_s);
    std::printf("%s  %-42s %7.3f s%s%s\n", problem.empty() ? "PASS" : "FAIL", c.name.c_str(), secs,
                problem.empty() ? "" : "  ", problem.c_str());
    failures += !problem.empty();
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures;
}
