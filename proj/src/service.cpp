#include "cw/service.hpp"

#include <algorithm>
#include <iostream>
#include <sstream>

#include "cw/errors.hpp"

namespace cw {

namespace {

void log_line(std::string_view level, const std::string& msg) {
  std::cerr << "[cw " << level << "] " << msg << '\n';
}

SensorChain make_chain(const ServiceConfig& cfg) {
  std::vector<SensorKind> kinds(cfg.channels.size(), SensorKind::TemperatureC);
  for (const auto& b : cfg.channels) kinds[static_cast<std::size_t>(b.channel)] = b.kind;
  return SensorChain(cfg.chain, std::move(kinds));
}

std::string format_c(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << v;
  return os.str();
}

}  // namespace

ControlPlane::ControlPlane(ServiceConfig cfg)
    : cfg_((validate(cfg), std::move(cfg))),
      clock_(cfg_.clock_mode == ClockMode::Simulated ? std::unique_ptr<Clock>(new SimClock)
                                                     : std::unique_ptr<Clock>(new WallClock)),
      sim_clock_(dynamic_cast<SimClock*>(clock_.get())),
      store_(cfg_.data_dir) {
  if (sim_clock_) {
    if (auto latest = store_.latest_timestamp()) sim_clock_->set(*latest + cfg_.plant_dt);
  }
  plant_ = std::make_unique<Plant>(cfg_.casings, cfg_.channels, cfg_.node_count);
  board_ = std::make_unique<FirmwareBoard>(
      cfg_.node_map ? NodeMap(*cfg_.node_map) : NodeMap::fill_order(), make_chain(cfg_), *plant_);
  bus_ = std::make_unique<ParallelBus>(*board_, *clock_, cfg_.bus_timeout);
  bus_->set_observer([this](const BusTransaction& tx) {
    if (external_observer_) external_observer_(tx);
  });
  plant_->apply_relays(board_->relays(), board_->node_map());

  blocks_ = cfg_.blocks;
  policies_ = cfg_.policies;
  last_activity_.assign(static_cast<std::size_t>(cfg_.node_count) + 1, clock_->now());
  next_poll_ = clock_->now();
  last_step_ = clock_->now();
}

ControlPlane::~ControlPlane() {
  stop_driver();
  exec_.stop();
}

std::optional<User> ControlPlane::authenticate(std::string_view token) const {
  if (token.empty()) return std::nullopt;
  for (const auto& u : cfg_.users) {
    if (u.token == token) return User{u.name, u.admin};
  }
  return std::nullopt;
}

std::optional<User> ControlPlane::user(std::string_view name) const {
  for (const auto& u : cfg_.users) {
    if (u.name == name) return User{u.name, u.admin};
  }
  return std::nullopt;
}

std::optional<std::size_t> ControlPlane::block_index(int node) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& ids = blocks_[i].node_ids;
    if (std::find(ids.begin(), ids.end(), node) != ids.end()) return i;
  }
  return std::nullopt;
}

bool ControlPlane::user_owns(const User& user, int node) const {
  const auto idx = block_index(node);
  return idx && blocks_[*idx].owner == user.name;
}

AuditEvent ControlPlane::execute_power(const std::string& actor, int node, bool on,
                                       const std::string& policy_id, const std::string& detail) {
  const Command cmd = on ? Command{PowerOn{node}} : Command{PowerOff{node}};
  AuditEvent ev;
  ev.ts = clock_->now();
  ev.actor = actor;
  ev.command = encode_command(cmd);
  ev.node = node;
  ev.policy_id = policy_id;
  ev.detail = detail;
  try {
    bus_->transact(cmd);
    ev.outcome = Outcome::Applied;
  } catch (const BusBusyError& e) {
    ev.outcome = Outcome::Failed;
    ev.detail = e.what();
  } catch (const TimeoutError& e) {
    ev.outcome = Outcome::Failed;
    ev.detail = e.what();
  }
  // The strobe may have reached the firmware even when the handshake failed.
  plant_->apply_relays(board_->relays(), board_->node_map());
  last_activity_[static_cast<std::size_t>(node)] = ev.ts;
  return ev;
}

AuditEvent ControlPlane::submit_power_command(const User& user, int node, bool on) {
  return exec_.run([&] {
    if (node < 1 || node > cfg_.node_count) {
      throw RangeError("node " + std::to_string(node) + " out of range 1-" +
                       std::to_string(cfg_.node_count));
    }
    AuditEvent ev;
    if (!user.admin && !user_owns(user, node)) {
      ev.ts = clock_->now();
      ev.actor = user.name;
      ev.command = encode_command(on ? Command{PowerOn{node}} : Command{PowerOff{node}});
      ev.node = node;
      ev.outcome = Outcome::Denied;
      ev.detail = "node " + std::to_string(node) + " is not in a block owned by " + user.name;
    } else {
      ev = execute_power(user.name, node, on, "", "");
    }
    return store_.record_audit({&ev, 1}).front();
  });
}

std::vector<SensorReading> ControlPlane::poll_locked() {
  cycle_starts_.push_back(clock_->now());
  auto bindings = plant_->bindings();
  std::sort(bindings.begin(), bindings.end(),
            [](const auto& a, const auto& b) { return a.channel < b.channel; });

  std::vector<SensorReading> batch;
  batch.reserve(bindings.size());
  for (const auto& b : bindings) {
    try {
      const auto tx = bus_->transact(ReadSensor{b.channel});
      SensorReading r;
      r.ts = tx.timestamp;
      r.channel = b.channel;
      r.casing_id = b.casing_id;
      r.kind = b.kind;
      r.raw_code = *tx.response;
      r.value = decode_reading(r.raw_code, board_->chain().params());
      batch.push_back(std::move(r));
    } catch (const TimeoutError& e) {
      ++gaps_;
      log_line("warn", "channel " + std::to_string(b.channel) + ": " + e.what());
    } catch (const BusBusyError& e) {
      ++gaps_;
      log_line("warn", "channel " + std::to_string(b.channel) + ": " + e.what());
    }
  }
  store_.record_readings(batch);
  return batch;
}

std::vector<SensorReading> ControlPlane::poll_cycle() {
  return exec_.run([this] { return poll_locked(); });
}

std::vector<AuditEvent> ControlPlane::evaluate_locked(const std::vector<SensorReading>& batch) {
  std::vector<AuditEvent> events;
  const Millis now = clock_->now();

  for (const auto& p : policies_) {
    if (!p.enabled) continue;
    auto in_scope = [&](const std::string& casing) {
      return p.casing_id == kAllCasings || p.casing_id == casing;
    };

    if (p.action == PolicyAction::DeactivateIdle) {
      const Millis window{static_cast<std::int64_t>(p.idle_timeout_s * 1000.0)};
      for (int node = 1; node <= cfg_.node_count; ++node) {
        if (!plant_->powered(node) || block_index(node)) continue;
        if (!in_scope(plant_->casing_of(node).id)) continue;
        const Millis idle = now - last_activity_[static_cast<std::size_t>(node)];
        if (idle < window) continue;
        events.push_back(execute_power(std::string(kPolicyActor), node, false, p.id,
                                       "idle for " + std::to_string(idle.count() / 1000) + " s"));
      }
      continue;
    }

    for (const auto& casing : plant_->casings()) {
      if (!in_scope(casing.id)) continue;
      int& disarmed = disarmed_[{p.id, casing.id}];
      if (disarmed > 0) {
        --disarmed;
        continue;
      }
      std::optional<double> hottest;
      for (const auto& r : batch) {
        if (r.casing_id == casing.id && r.kind == SensorKind::TemperatureC) {
          hottest = std::max(hottest.value_or(r.value), r.value);
        }
      }
      if (!hottest || *hottest < p.threshold_c) continue;

      const std::string why =
          casing.id + " at " + format_c(*hottest) + " C >= " + format_c(p.threshold_c) + " C";
      if (p.action == PolicyAction::AlertOnly) {
        AuditEvent alert;
        alert.ts = now;
        alert.actor = std::string(kPolicyActor);
        alert.outcome = Outcome::Alert;
        alert.policy_id = p.id;
        alert.detail = why;
        events.push_back(std::move(alert));
        continue;
      }
      bool fired = false;
      for (int node : casing.node_ids) {
        if (!plant_->powered(node)) continue;
        events.push_back(execute_power(std::string(kPolicyActor), node, false, p.id, why));
        fired = true;
      }
      if (fired) disarmed = p.rearm_cycles;
    }
  }
  return store_.record_audit(events);
}

std::vector<AuditEvent> ControlPlane::evaluate_policies(const std::vector<SensorReading>& batch) {
  return exec_.run([&] { return evaluate_locked(batch); });
}

void ControlPlane::run_due_poll() {
  const Millis now = clock_->now();
  if (now < next_poll_) return;
  evaluate_locked(poll_locked());
  while (next_poll_ <= now) next_poll_ += cfg_.poll_interval;
}

void ControlPlane::tick_locked() {
  run_due_poll();
  if (sim_clock_) {
    plant_->step(static_cast<double>(cfg_.plant_dt.count()) / 1000.0);
    sim_clock_->advance(cfg_.plant_dt);
  } else {
    const Millis now = clock_->now();
    if (now > last_step_) plant_->step(static_cast<double>((now - last_step_).count()) / 1000.0);
    last_step_ = now;
  }
}

void ControlPlane::tick() {
  exec_.run([this] { tick_locked(); });
}

void ControlPlane::advance(Millis dt) {
  if (!sim_clock_) throw Error("advance() needs the simulated clock");
  exec_.run([&] {
    const Millis target = clock_->now() + dt;
    while (clock_->now() < target) tick_locked();
  });
}

void ControlPlane::run_cycles(int n) {
  if (!sim_clock_) throw Error("run_cycles() needs the simulated clock");
  exec_.run([&] {
    const auto target = cycle_starts_.size() + static_cast<std::size_t>(std::max(n, 0));
    while (cycle_starts_.size() < target) tick_locked();
  });
}

void ControlPlane::start_driver() {
  if (driver_.joinable()) return;
  {
    std::lock_guard lock(driver_mu_);
    driver_stop_ = false;
  }
  driver_ = std::thread([this] {
    using namespace std::chrono;
    const auto wall_start = steady_clock::now();
    const Millis sim_start = clock_->now();
    for (;;) {
      try {
        if (sim_clock_) {
          const auto elapsed = duration<double>(steady_clock::now() - wall_start).count();
          const Millis target =
              sim_start + Millis{static_cast<std::int64_t>(elapsed * cfg_.time_scale * 1000.0)};
          // Bounded batches so API requests interleave with catch-up.
          exec_.run([&] {
            for (int i = 0; i < 256 && clock_->now() < target; ++i) tick_locked();
          });
        } else {
          tick();
        }
      } catch (const std::exception& e) {
        log_line("error", std::string("driver tick: ") + e.what());
      }
      const auto pause = sim_clock_ ? milliseconds{5} : duration_cast<milliseconds>(cfg_.plant_dt);
      std::unique_lock lock(driver_mu_);
      if (driver_cv_.wait_for(lock, pause, [this] { return driver_stop_; })) return;
    }
  });
}

void ControlPlane::stop_driver() {
  {
    std::lock_guard lock(driver_mu_);
    driver_stop_ = true;
  }
  driver_cv_.notify_all();
  if (driver_.joinable()) driver_.join();
}

std::vector<NodeStatus> ControlPlane::nodes() const {
  return exec_.run([this] {
    std::vector<NodeStatus> out;
    for (int n = 1; n <= cfg_.node_count; ++n) {
      NodeStatus s;
      s.id = n;
      s.on = plant_->powered(n);
      s.casing_id = plant_->casing_of(n).id;
      if (const auto idx = block_index(n)) {
        s.block_id = blocks_[*idx].id;
        s.owner = blocks_[*idx].owner;
      }
      s.relay = board_->node_map().address(n);
      s.last_activity = last_activity_[static_cast<std::size_t>(n)];
      out.push_back(std::move(s));
    }
    return out;
  });
}

NodeStatus ControlPlane::node(int id) const {
  if (id < 1 || id > cfg_.node_count) {
    throw RangeError("node " + std::to_string(id) + " out of range 1-" +
                     std::to_string(cfg_.node_count));
  }
  return nodes()[static_cast<std::size_t>(id - 1)];
}

std::vector<CasingStatus> ControlPlane::casings() const {
  return exec_.run([this] {
    std::vector<CasingStatus> out;
    for (const auto& c : plant_->casings()) {
      CasingStatus s;
      s.id = c.id;
      s.node_ids = c.node_ids;
      s.powered = plant_->powered_in(c);
      s.plant_temp_c = c.temp_c;
      s.plant_humidity_rh = c.humidity_rh;
      for (const auto& b : plant_->bindings()) {
        if (b.casing_id != c.id) continue;
        auto latest = store_.latest_reading(b.channel);
        auto& slot = b.kind == SensorKind::TemperatureC ? s.temperature : s.humidity;
        if (latest && (!slot || latest->ts > slot->ts)) slot = latest;
      }
      out.push_back(std::move(s));
    }
    return out;
  });
}

std::vector<Policy> ControlPlane::policies() const {
  return exec_.run([this] { return policies_; });
}

void ControlPlane::set_policies(const User& user, std::vector<Policy> policies) {
  if (!user.admin) throw AclError("only admins may edit policies");
  exec_.run([&] {
    validate_policies(policies, plant_->casings());
    policies_ = std::move(policies);
    std::erase_if(disarmed_, [&](const auto& kv) {
      return std::none_of(policies_.begin(), policies_.end(),
                          [&](const Policy& p) { return p.id == kv.first.first; });
    });
  });
}

std::vector<Block> ControlPlane::blocks() const {
  return exec_.run([this] { return blocks_; });
}

void ControlPlane::add_block(const User& user, Block block) {
  if (!user.admin) throw AclError("only admins may create blocks");
  exec_.run([&] {
    if (block.id.empty()) throw ConfigError("block id must not be empty");
    if (!this->user(block.owner)) throw ConfigError("unknown user " + block.owner);
    if (block.node_ids.empty()) throw ConfigError("block has no nodes");
    for (int n : block.node_ids) {
      if (n < 1 || n > cfg_.node_count) {
        throw ConfigError("node " + std::to_string(n) + " out of range");
      }
      if (std::count(block.node_ids.begin(), block.node_ids.end(), n) > 1) {
        throw ConfigError("node " + std::to_string(n) + " listed twice");
      }
    }
    for (const auto& b : blocks_) {
      if (b.id == block.id) throw ConflictError("block " + block.id + " already exists");
    }
    for (int n : block.node_ids) {
      if (const auto idx = block_index(n)) {
        throw ConflictError("node " + std::to_string(n) + " already belongs to block " +
                            blocks_[*idx].id);
      }
    }
    blocks_.push_back(std::move(block));
  });
}

std::vector<SensorReading> ControlPlane::query_readings(const ReadingQuery& q) const {
  return store_.query_readings(q);
}

std::vector<AuditEvent> ControlPlane::audit(std::optional<Millis> since,
                                            std::optional<std::size_t> last) const {
  return store_.query_audit(since, last);
}

RelayMatrix ControlPlane::relays() const {
  return exec_.run([this] { return board_->relays(); });
}

std::string ControlPlane::plant_snapshot() const {
  return exec_.run([this] { return plant_->snapshot_line(clock_->now()); });
}

std::vector<Millis> ControlPlane::cycle_starts() const {
  return exec_.run([this] { return cycle_starts_; });
}

Health ControlPlane::health() const {
  return exec_.run([this] {
    Health h;
    h.now = clock_->now();
    h.simulated = sim_clock_ != nullptr;
    h.cycles = cycle_starts_.size();
    h.gaps = gaps_;
    h.bus_transactions = bus_->transaction_count();
    h.readings = store_.reading_count();
    h.next_poll = next_poll_;
    return h;
  });
}

void ControlPlane::set_bus_observer(ParallelBus::Observer obs) {
  exec_.run([&] { external_observer_ = std::move(obs); });
}

void ControlPlane::set_bus_timeout(std::chrono::microseconds t) {
  exec_.run([&] { bus_->set_timeout(t); });
}

}  // namespace cw
