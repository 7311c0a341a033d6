#pragma once

// The control-plane daemon core: owns the simulated hardware (plant,
// firmware board, parallel bus), polls sensors on a fixed cadence, runs the
// policy engine and executes operator power commands behind block ACLs.
//
// All hardware access is funnelled through one Executor, so sensor reads,
// policy actions and operator commands never interleave on the bus.

#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "cw/clock.hpp"
#include "cw/config.hpp"
#include "cw/executor.hpp"
#include "cw/firmware.hpp"
#include "cw/plant.hpp"
#include "cw/port_bus.hpp"
#include "cw/store.hpp"

namespace cw {

struct User {
  std::string name;
  bool admin = false;
};

struct NodeStatus {
  int id = 0;
  bool on = false;
  std::string casing_id;
  std::optional<std::string> block_id;
  std::optional<std::string> owner;
  RelayAddress relay{};
  Millis last_activity{0};
};

struct CasingStatus {
  std::string id;
  std::vector<int> node_ids;
  int powered = 0;
  double plant_temp_c = 0.0;
  double plant_humidity_rh = 0.0;
  std::optional<SensorReading> temperature;
  std::optional<SensorReading> humidity;
};

struct Health {
  Millis now{0};
  bool simulated = true;
  std::uint64_t cycles = 0;
  std::uint64_t gaps = 0;
  std::uint64_t bus_transactions = 0;
  std::size_t readings = 0;
  std::optional<Millis> next_poll;
};

class ControlPlane {
 public:
  // The clock follows cfg.clock_mode. In simulated mode time starts at 0, or
  // one tick past the newest persisted record when the data dir is reused.
  explicit ControlPlane(ServiceConfig cfg);
  ~ControlPlane();

  ControlPlane(const ControlPlane&) = delete;
  ControlPlane& operator=(const ControlPlane&) = delete;

  std::optional<User> authenticate(std::string_view token) const;
  std::optional<User> user(std::string_view name) const;

  // ACL-checked power command. Denied commands never reach the bus; bus
  // errors come back as a Failed event. Throws RangeError for a bad node.
  AuditEvent submit_power_command(const User& user, int node, bool on);

  // One sweep over every configured channel. Timed-out channels are
  // skipped (counted as gaps). Readings are durable on return.
  std::vector<SensorReading> poll_cycle();

  // Runs every enabled policy against a poll batch.
  std::vector<AuditEvent> evaluate_policies(const std::vector<SensorReading>& batch);

  // Simulated mode only: advances the clock by dt in plant_dt ticks,
  // stepping the plant and running poll cycles (and policies) as they fall due.
  void advance(Millis dt);
  // Advances until `n` more poll cycles have run.
  void run_cycles(int n);
  // One driver tick: due poll, then a plant step.
  void tick();

  // Background driver: paces simulated time at time_scale (or follows the
  // wall clock) until stop_driver().
  void start_driver();
  void stop_driver();

  std::vector<NodeStatus> nodes() const;
  // Throws RangeError for an unknown node.
  NodeStatus node(int id) const;
  std::vector<CasingStatus> casings() const;

  std::vector<Policy> policies() const;
  // Admin only (AclError); throws ConfigError for an invalid set.
  void set_policies(const User& user, std::vector<Policy> policies);

  std::vector<Block> blocks() const;
  // Admin only (AclError); ConflictError on overlap or duplicate id,
  // ConfigError otherwise invalid.
  void add_block(const User& user, Block block);

  std::vector<SensorReading> query_readings(const ReadingQuery& q) const;
  std::vector<AuditEvent> audit(std::optional<Millis> since = std::nullopt,
                                std::optional<std::size_t> last = std::nullopt) const;

  RelayMatrix relays() const;
  std::string plant_snapshot() const;
  std::vector<Millis> cycle_starts() const;
  Health health() const;

  const ServiceConfig& config() const { return cfg_; }
  const Clock& clock() const { return *clock_; }
  Millis now() const { return clock_->now(); }

  // Test hooks. Both run on the executor.
  void set_bus_observer(ParallelBus::Observer obs);
  void set_bus_timeout(std::chrono::microseconds t);
  // Direct access to the plant (e.g. to preheat a casing).
  template <class F>
  auto with_plant(F&& f) {
    return exec_.run([&] { return f(*plant_); });
  }

 private:
  AuditEvent execute_power(const std::string& actor, int node, bool on,
                           const std::string& policy_id, const std::string& detail);
  bool user_owns(const User& user, int node) const;
  std::optional<std::size_t> block_index(int node) const;
  void tick_locked();
  void run_due_poll();
  std::vector<SensorReading> poll_locked();
  std::vector<AuditEvent> evaluate_locked(const std::vector<SensorReading>& batch);

  ServiceConfig cfg_;
  std::unique_ptr<Clock> clock_;
  SimClock* sim_clock_ = nullptr;
  Store store_;

  // Executor-owned state.
  std::unique_ptr<Plant> plant_;
  std::unique_ptr<FirmwareBoard> board_;
  std::unique_ptr<ParallelBus> bus_;
  std::vector<Block> blocks_;
  std::vector<Policy> policies_;
  std::map<std::pair<std::string, std::string>, int> disarmed_;  // (policy, casing) -> cycles
  std::vector<Millis> last_activity_;
  Millis next_poll_{0};
  Millis last_step_{0};
  std::vector<Millis> cycle_starts_;
  std::uint64_t gaps_ = 0;
  ParallelBus::Observer external_observer_;

  std::mutex driver_mu_;
  std::condition_variable driver_cv_;
  bool driver_stop_ = false;
  std::thread driver_;

  // Last member: destroyed (joined) first.
  mutable Executor exec_;
};

}  // namespace cw
