#include <doctest.h>

#include <map>
#include <random>
#include <vector>

#include "cw/errors.hpp"
#include "cw/firmware.hpp"
#include "cw/plant.hpp"
#include "cw/port_bus.hpp"

using namespace cw;
using namespace std::chrono_literals;

TEST_CASE("write_data sets the data lines") {
  PortRegisters regs;
  CHECK(write_data(regs, 0x00).data == 0);
  auto one = write_data(regs, 0x01);
  CHECK(data_line(one, 0));
  for (int i = 1; i < 8; ++i) CHECK_FALSE(data_line(one, i));

  auto off1 = write_data(regs, 129);
  CHECK(data_line(off1, 0));
  CHECK(data_line(off1, 7));
  for (int i = 1; i < 7; ++i) CHECK_FALSE(data_line(off1, i));
}

TEST_CASE("write_data refuses to fight the device") {
  PortRegisters regs;
  regs.latch_dir = LatchDirection::DeviceToHost;
  CHECK_THROWS_AS(write_data(regs, 1), DirectionError);
}

TEST_CASE("status is input-only, control is 4 lines") {
  PortRegisters regs;
  CHECK_THROWS_AS(write_status(regs, 0), DirectionError);
  CHECK_THROWS_AS(write_control(regs, 0x10), RangeError);
  CHECK(write_control(regs, 0x0A).control == 0x0A);
  CHECK_THROWS_AS(device_set_status(regs, 0x20), RangeError);
  CHECK_THROWS_AS(device_drive_data(regs, 1), DirectionError);
}

TEST_CASE("pin_lookup rows") {
  auto p2 = pin_lookup(2);
  CHECK(p2.signal == Signal::Data0);
  CHECK(p2.direction == PinDirection::Out);
  CHECK(p2.reg == Register::Data);

  auto p11 = pin_lookup(11);
  CHECK(p11.signal == Signal::Busy);
  CHECK(p11.direction == PinDirection::In);
  CHECK(p11.reg == Register::Status);

  auto p18 = pin_lookup(18);
  CHECK(p18.signal == Signal::Ground);
  CHECK(p18.reg == Register::Ground);

  CHECK(pin_lookup(15).pin_centronics == 32);
  CHECK(to_string(pin_lookup(17).signal) == "nSelect-Printer / nSelect-In");

  CHECK_THROWS_AS(pin_lookup(0), RangeError);
  CHECK_THROWS_AS(pin_lookup(26), RangeError);
}

TEST_CASE("pin table register multiset") {
  std::map<Register, int> counts;
  for (int pin = 1; pin <= 25; ++pin) counts[pin_lookup(pin).reg]++;
  CHECK(counts[Register::Data] == 8);
  CHECK(counts[Register::Status] == 5);
  CHECK(counts[Register::Control] == 4);
  CHECK(counts[Register::Ground] == 8);
  for (int pin = 2; pin <= 9; ++pin) {
    CHECK(static_cast<int>(pin_lookup(pin).signal) - static_cast<int>(Signal::Data0) == pin - 2);
  }
}

namespace {

struct FixedPlant : AnalogInputs {
  double value = 0.0;
  double channel_value(int) const override { return value; }
};

struct Board {
  FixedPlant plant;
  FirmwareBoard fw{NodeMap::fill_order(),
                   SensorChain({}, std::vector<SensorKind>(8, SensorKind::TemperatureC)), plant};
  SimClock clock;
  ParallelBus bus{fw, clock};
};

// Nearest 8-bit code to a voltage on a 5 V reference, by enumeration.
int nearest_code(double volts) {
  int best = 0;
  double best_err = 1e9;
  for (int c = 0; c <= 255; ++c) {
    const double err = std::abs(c * 5.0 / 255.0 - volts);
    if (err < best_err) {
      best_err = err;
      best = c;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("transact power command carries no response") {
  Board b;
  auto tx = b.bus.transact(PowerOn{1});
  CHECK(tx.command == 0x01);
  CHECK_FALSE(tx.response.has_value());
  CHECK(b.fw.relays().state({Mcu::A, OutPort::P0, 0}) == RelayState::Closed);
  CHECK(b.bus.registers().latch_dir == LatchDirection::HostToDevice);
  CHECK((b.bus.registers().status & kStatusBusy) == 0);
}

TEST_CASE("transact sensor read") {
  Board b;
  b.plant.value = 0.0;
  auto zero = b.bus.transact(ReadSensor{0});
  REQUIRE(zero.response.has_value());
  CHECK(*zero.response == 0);

  // 25 degC -> 0.25 V -> x5 -> 1.25 V on a 5 V, 8-bit quantizer.
  CHECK(nearest_code(1.25) == 64);
  b.plant.value = 25.0;
  b.clock.advance(1000ms);
  auto warm = b.bus.transact(ReadSensor{0});
  CHECK(*warm.response == 64);
  CHECK(warm.timestamp == 1000ms);
  CHECK(b.bus.registers().latch_dir == LatchDirection::HostToDevice);
}

TEST_CASE("transaction determinism") {
  Board b;
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> temp(0.0, 100.0);
  for (int i = 0; i < 200; ++i) {
    b.plant.value = temp(rng);
    auto first = b.bus.transact(ReadSensor{i % 8});
    auto second = b.bus.transact(ReadSensor{i % 8});
    CHECK(first.response == second.response);
  }
}

namespace {

// A device that never lets go of Busy.
struct StuckDevice : BusDevice {
  std::optional<std::chrono::microseconds> strobe(std::uint8_t) override { return std::nullopt; }
  std::optional<std::uint8_t> drive() override { return 0; }
};

struct SlowDevice : BusDevice {
  std::chrono::microseconds hold;
  explicit SlowDevice(std::chrono::microseconds h) : hold(h) {}
  std::optional<std::chrono::microseconds> strobe(std::uint8_t) override { return hold; }
  std::optional<std::uint8_t> drive() override { return 42; }
};

struct MuteDevice : BusDevice {
  std::optional<std::chrono::microseconds> strobe(std::uint8_t) override { return 5us; }
  std::optional<std::uint8_t> drive() override { return std::nullopt; }
};

// Re-enters the bus from inside a transaction.
struct ReentrantDevice : BusDevice {
  ParallelBus* bus = nullptr;
  bool saw_busy_error = false;
  bool saw_direction_error = false;
  std::optional<std::chrono::microseconds> strobe(std::uint8_t) override {
    try {
      bus->transact(PowerOn{1});
    } catch (const BusBusyError&) {
      saw_busy_error = true;
    }
    return 1us;
  }
  std::optional<std::uint8_t> drive() override {
    try {
      bus->host_write(0x55);
    } catch (const DirectionError&) {
      saw_direction_error = true;
    }
    return 7;
  }
};

}  // namespace

TEST_CASE("timeouts leave the bus idle") {
  SimClock clock;
  StuckDevice stuck;
  ParallelBus bus(stuck, clock);
  CHECK_THROWS_AS(bus.transact(PowerOn{1}), TimeoutError);
  CHECK_FALSE(bus.in_flight());
  CHECK(bus.registers().latch_dir == LatchDirection::HostToDevice);

  SlowDevice slow(150ms);
  ParallelBus slow_bus(slow, clock);
  CHECK(slow_bus.timeout() == 100ms);
  CHECK_THROWS_AS(slow_bus.transact(ReadSensor{0}), TimeoutError);
  slow_bus.set_timeout(200ms);
  CHECK(*slow_bus.transact(ReadSensor{0}).response == 42);

  MuteDevice mute;
  ParallelBus mute_bus(mute, clock);
  CHECK_THROWS_AS(mute_bus.transact(ReadSensor{3}), TimeoutError);
  CHECK(mute_bus.registers().latch_dir == LatchDirection::HostToDevice);
  CHECK_NOTHROW(mute_bus.transact(PowerOn{3}));
}

TEST_CASE("half-duplex exclusion under re-entry") {
  SimClock clock;
  ReentrantDevice dev;
  ParallelBus bus(dev, clock);
  dev.bus = &bus;
  auto tx = bus.transact(ReadSensor{0});
  CHECK(dev.saw_busy_error);
  CHECK(dev.saw_direction_error);
  CHECK(*tx.response == 7);
  CHECK(bus.transaction_count() == 1);
}

TEST_CASE("observer sees each completed transaction") {
  Board b;
  std::vector<std::uint8_t> seen;
  b.bus.set_observer([&](const BusTransaction& tx) { seen.push_back(tx.command); });
  b.bus.transact(PowerOn{5});
  b.bus.transact(PowerOff{5});
  b.bus.transact(ReadSensor{2});
  CHECK(seen == std::vector<std::uint8_t>{5, 133, 202});
  CHECK(b.bus.base_address() == 0x378);
}

TEST_CASE("observer also sees failed attempts") {
  SimClock clock;
  StuckDevice stuck;
  ParallelBus bus(stuck, clock);
  std::vector<BusTransaction> seen;
  bus.set_observer([&](const BusTransaction& tx) { seen.push_back(tx); });
  CHECK_THROWS_AS(bus.transact(PowerOff{9}), TimeoutError);
  REQUIRE(seen.size() == 1);
  CHECK(seen[0].command == 137);
  CHECK_FALSE(seen[0].completed);
  CHECK(bus.transaction_count() == 0);
}
