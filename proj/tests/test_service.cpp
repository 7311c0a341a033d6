#include <doctest.h>

#include <algorithm>
#include <thread>

#include "cw/errors.hpp"
#include "cw/service.hpp"
#include "test_util.hpp"

using namespace cw;
using cw::testing::TempDir;
using cw::testing::query;
using cw::testing::test_config;

namespace {

const User kAdmin{"admin", true};
const User kAlice{"alice", false};  // owns block-a, nodes 1-12
const User kBob{"bob", false};      // owns block-b, nodes 13-24

void set_casing_temp(ControlPlane& svc, const std::string& casing, double t) {
  svc.with_plant([&](Plant& p) {
    p.casing(casing).temp_c = t;
    return 0;
  });
}

std::vector<SensorReading> temperatures(const std::vector<SensorReading>& batch) {
  std::vector<SensorReading> out;
  std::copy_if(batch.begin(), batch.end(), std::back_inserter(out),
               [](const auto& r) { return r.kind == SensorKind::TemperatureC; });
  return out;
}

}  // namespace

TEST_CASE("authentication uses the token table") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  CHECK(svc.authenticate("alice-token")->name == "alice");
  CHECK(svc.authenticate("admin-token")->admin);
  CHECK_FALSE(svc.authenticate("").has_value());
  CHECK_FALSE(svc.authenticate("nope").has_value());
}

TEST_CASE("owner powers a node in their block") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  const auto ev = svc.submit_power_command(kAlice, 3, true);
  CHECK(ev.outcome == Outcome::Applied);
  CHECK(ev.command == std::optional<std::uint8_t>{3});
  CHECK(ev.seq == 1);
  // Node 3 sits on MCU A, P0, bit 2 in fill order.
  CHECK(svc.relays().state({Mcu::A, OutPort::P0, 2}) == RelayState::Closed);
  CHECK(svc.relays().closed_count() == 1);
  CHECK(svc.node(3).on);
}

TEST_CASE("non-owner is denied without bus traffic") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  int bus_power = 0;
  svc.set_bus_observer([&](const BusTransaction& tx) {
    bus_power += is_power_command(decode_command(tx.command));
  });
  const auto ev = svc.submit_power_command(kAlice, 13, true);
  CHECK(ev.outcome == Outcome::Denied);
  CHECK(bus_power == 0);
  CHECK(svc.relays().closed_count() == 0);
  CHECK(svc.audit().size() == 1);
  // Unassigned nodes are admin-only.
  CHECK(svc.submit_power_command(kBob, 40, true).outcome == Outcome::Denied);
}

TEST_CASE("admin powers off node 48 with byte 176") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  std::vector<std::uint8_t> bytes;
  svc.set_bus_observer([&](const BusTransaction& tx) { bytes.push_back(tx.command); });
  svc.submit_power_command(kAdmin, 48, true);
  const auto ev = svc.submit_power_command(kAdmin, 48, false);
  CHECK(ev.outcome == Outcome::Applied);
  CHECK(bytes == std::vector<std::uint8_t>{48, 176});
  CHECK_THROWS_AS(svc.submit_power_command(kAdmin, 49, true), RangeError);
  CHECK_THROWS_AS(svc.submit_power_command(kAdmin, 0, true), RangeError);
}

TEST_CASE("poll cycle reads every channel") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  const auto batch = svc.poll_cycle();
  CHECK(batch.size() == 8);
  for (const auto& r : temperatures(batch)) {
    CHECK(r.value >= 24.9);
    CHECK(r.value <= 25.3);
    CHECK(r.raw_code == 64);
    CHECK(r.value == decode_reading(r.raw_code, ChainParams{}));
  }
  CHECK(svc.query_readings({}).size() == 8);
}

TEST_CASE("no channels, no bus traffic") {
  TempDir dir;
  auto cfg = test_config(dir.path());
  cfg.channels.clear();
  ControlPlane svc(cfg);
  int traffic = 0;
  svc.set_bus_observer([&](const BusTransaction&) { ++traffic; });
  CHECK(svc.poll_cycle().empty());
  CHECK(traffic == 0);
}

TEST_CASE("timeouts become gaps and the cycle continues") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  // Conversions take 100 us; relay commands 10 us.
  svc.set_bus_timeout(std::chrono::microseconds{50});
  CHECK(svc.poll_cycle().empty());
  CHECK(svc.health().gaps == 8);
  CHECK(svc.submit_power_command(kAlice, 1, true).outcome == Outcome::Applied);
  svc.set_bus_timeout(std::chrono::microseconds{5});
  const auto failed = svc.submit_power_command(kAlice, 2, true);
  CHECK(failed.outcome == Outcome::Failed);
  CHECK(failed.detail.find("Busy") != std::string::npos);
}

TEST_CASE("shutdown policy at threshold") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  for (int n = 1; n <= 12; ++n) svc.submit_power_command(kAdmin, n, true);

  SUBCASE("46.1 C trips all 12 nodes") {
    set_casing_temp(svc, "row1", 46.1);
    const auto events = svc.evaluate_policies(svc.poll_cycle());
    CHECK(events.size() == 12);
    for (const auto& e : events) {
      CHECK(e.actor == "policy-engine");
      CHECK(e.outcome == Outcome::Applied);
      CHECK(e.policy_id == "overheat");
    }
    for (int n = 1; n <= 12; ++n) CHECK_FALSE(svc.node(n).on);
  }
  SUBCASE("44.9 C does nothing") {
    set_casing_temp(svc, "row1", 44.9);
    CHECK(svc.evaluate_policies(svc.poll_cycle()).empty());
    CHECK(svc.relays().closed_count() == 12);
  }
  SUBCASE("disabled policy ignores 99 C") {
    auto policies = svc.policies();
    policies[0].enabled = false;
    svc.set_policies(kAdmin, policies);
    set_casing_temp(svc, "row1", 99.0);
    CHECK(svc.evaluate_policies(svc.poll_cycle()).empty());
    CHECK(svc.relays().closed_count() == 12);
  }
}

TEST_CASE("only the hot casing is shut down") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  for (int n : {1, 2, 13, 14}) svc.submit_power_command(kAdmin, n, true);
  set_casing_temp(svc, "row2", 60.0);
  const auto events = svc.evaluate_policies(svc.poll_cycle());
  CHECK(events.size() == 2);
  CHECK(svc.node(1).on);
  CHECK_FALSE(svc.node(13).on);
}

TEST_CASE("alert-only policy writes an alert and leaves power alone") {
  TempDir dir;
  auto cfg = test_config(dir.path());
  cfg.policies = {{"warn", "row1", 40.0, PolicyAction::AlertOnly, true, 1, 3600.0}};
  ControlPlane svc(cfg);
  svc.submit_power_command(kAdmin, 1, true);
  set_casing_temp(svc, "row1", 41.0);
  const auto events = svc.evaluate_policies(svc.poll_cycle());
  REQUIRE(events.size() == 1);
  CHECK(events[0].outcome == Outcome::Alert);
  CHECK_FALSE(events[0].command.has_value());
  CHECK(svc.node(1).on);
}

TEST_CASE("re-arm delay lets an operator re-power for one cycle") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  svc.with_plant([](Plant& p) {
    p.casing("row1").ambient_c = 50.0;
    p.casing("row1").temp_c = 50.0;
    return 0;
  });
  auto policy_events = [&] {
    const auto audit = svc.audit();
    return std::count_if(audit.begin(), audit.end(),
                         [](const AuditEvent& e) { return e.actor == kPolicyActor; });
  };
  svc.submit_power_command(kAdmin, 1, true);
  svc.run_cycles(1);
  CHECK(policy_events() == 1);
  CHECK_FALSE(svc.node(1).on);
  svc.submit_power_command(kAdmin, 1, true);
  svc.run_cycles(1);
  CHECK(policy_events() == 1);
  CHECK(svc.node(1).on);
  svc.run_cycles(1);
  CHECK(policy_events() == 2);
  CHECK_FALSE(svc.node(1).on);
}

TEST_CASE("idle deactivation skips nodes in blocks") {
  TempDir dir;
  auto cfg = test_config(dir.path());
  cfg.policies = {{"idle", "*", 45.0, PolicyAction::DeactivateIdle, true, 1, 1200.0}};
  ControlPlane svc(cfg);
  svc.submit_power_command(kAdmin, 1, true);   // block-a
  svc.submit_power_command(kAdmin, 30, true);  // unassigned
  svc.advance(Millis{601'000});                // cycles at 0 and 600 s
  CHECK(svc.node(30).on);
  svc.advance(Millis{1'200'000});              // 1200 s and 1800 s
  CHECK_FALSE(svc.node(30).on);
  CHECK(svc.node(1).on);
  const auto audit = svc.audit();
  CHECK(audit.back().policy_id == "idle");
  CHECK(audit.back().node == 30);
}

TEST_CASE("poll cadence on the simulated clock") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  svc.advance(Millis{6 * 600'000 + 1});
  const auto starts = svc.cycle_starts();
  REQUIRE(starts.size() == 7);
  for (std::size_t i = 1; i < starts.size(); ++i) {
    CHECK(starts[i] - starts[i - 1] == Millis{600'000});
  }
  CHECK(svc.query_readings(query(0)).size() == 7);
}

TEST_CASE("audit completeness with injected failures") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  int attempts = 0;
  svc.set_bus_observer([&](const BusTransaction& tx) {
    attempts += is_power_command(decode_command(tx.command));
  });
  for (int i = 0; i < 40; ++i) {
    svc.set_bus_timeout(std::chrono::microseconds{i % 3 == 0 ? 5 : 100'000});
    svc.submit_power_command(i % 2 ? kAlice : kBob, 1 + i % 24, i % 4 < 2);
  }
  int applied_or_failed = 0, failed = 0;
  for (const auto& e : svc.audit()) {
    applied_or_failed += e.outcome == Outcome::Applied || e.outcome == Outcome::Failed;
    failed += e.outcome == Outcome::Failed;
  }
  CHECK(failed > 0);
  CHECK(attempts == applied_or_failed);
}

TEST_CASE("relay and plant stay coherent after every transaction") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  for (int i = 0; i < 60; ++i) {
    svc.submit_power_command(kAdmin, 1 + (i * 7) % 48, i % 3 != 0);
    const auto relays = svc.relays();
    for (const auto& n : svc.nodes()) {
      CHECK(n.on == (relays.state(n.relay) == RelayState::Closed));
    }
  }
}

TEST_CASE("policy and block administration") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  CHECK_THROWS_AS(svc.set_policies(kAlice, {}), AclError);
  CHECK_THROWS_AS(
      svc.set_policies(kAdmin, {{"x", "nowhere", 45.0, PolicyAction::AlertOnly, true, 1, 1.0}}),
      ConfigError);
  svc.set_policies(kAdmin, {});
  CHECK(svc.policies().empty());

  CHECK_THROWS_AS(svc.add_block(kAlice, {"c", "alice", {30}}), AclError);
  CHECK_THROWS_AS(svc.add_block(kAdmin, {"c", "alice", {12}}), ConflictError);
  CHECK_THROWS_AS(svc.add_block(kAdmin, {"block-a", "alice", {30}}), ConflictError);
  CHECK_THROWS_AS(svc.add_block(kAdmin, {"c", "zed", {30}}), ConfigError);
  CHECK_THROWS_AS(svc.add_block(kAdmin, {"c", "alice", {49}}), ConfigError);
  svc.add_block(kAdmin, {"c", "alice", {30, 31}});
  CHECK(svc.blocks().size() == 3);
  CHECK(svc.submit_power_command(kAlice, 30, true).outcome == Outcome::Applied);
}

TEST_CASE("restart resumes simulated time after persisted records") {
  TempDir dir;
  {
    ControlPlane svc(test_config(dir.path()));
    svc.run_cycles(3);
    CHECK(svc.query_readings(query(0)).size() == 3);
  }
  ControlPlane again(test_config(dir.path()));
  CHECK(again.now() == Millis{1'200'000 + 1'000});
  again.run_cycles(1);
  const auto ch0 = again.query_readings(query(0));
  REQUIRE(ch0.size() == 4);
  CHECK(ch0[3].ts > ch0[2].ts);
}

TEST_CASE("concurrent callers are serialized onto the bus") {
  TempDir dir;
  auto cfg = test_config(dir.path());
  cfg.time_scale = 100'000.0;
  ControlPlane svc(cfg);
  svc.start_driver();
  std::vector<std::thread> threads;
  std::atomic<int> applied{0};
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 50; ++i) {
        const auto ev = svc.submit_power_command(kAdmin, 1 + (t * 12 + i) % 48, i % 2 == 0);
        applied += ev.outcome == Outcome::Applied;
        (void)svc.nodes();
      }
    });
  }
  for (auto& th : threads) th.join();
  svc.stop_driver();
  CHECK(applied == 200);
  CHECK(svc.health().gaps == 0);
  CHECK(svc.health().cycles >= 1);
}

TEST_CASE("plant snapshot export") {
  TempDir dir;
  ControlPlane svc(test_config(dir.path()));
  svc.submit_power_command(kAdmin, 5, true);
  const auto line = svc.plant_snapshot();
  CHECK(line.find("\"powered_nodes\":[5]") != std::string::npos);
}
