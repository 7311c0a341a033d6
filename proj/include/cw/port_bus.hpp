#pragma once

// Register-level model of a Standard Parallel Port (SPP) plus the latched
// half-duplex transaction used to both command the device and read it back.
//
// "0x378" is only a label here. Nothing touches real I/O space.

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>

#include "cw/clock.hpp"
#include "cw/command.hpp"

namespace cw {

inline constexpr std::uint16_t kLpt1Base = 0x378;

enum class LatchDirection { HostToDevice, DeviceToHost };

// Status bits, as laid out in the 5-bit status field.
enum StatusBit : std::uint8_t {
  kStatusNAck = 1u << 0,
  kStatusBusy = 1u << 1,
  kStatusPaperOut = 1u << 2,
  kStatusSelect = 1u << 3,
  kStatusNError = 1u << 4,
};
inline constexpr std::uint8_t kStatusMask = 0x1F;

// Control bits; these coincide with bits 0-3 of the SPP control register.
// Bits hold line levels, so the active-low lines idle at 1.
enum ControlBit : std::uint8_t {
  kControlNStrobe = 1u << 0,
  kControlNAutoLinefeed = 1u << 1,
  kControlNInitialize = 1u << 2,
  kControlNSelectIn = 1u << 3,
};
inline constexpr std::uint8_t kControlMask = 0x0F;

struct PortRegisters {
  std::uint8_t data = 0;
  std::uint8_t status = kStatusNAck | kStatusSelect | kStatusNError;
  std::uint8_t control = kControlNStrobe | kControlNAutoLinefeed | kControlNInitialize |
                         kControlNSelectIn;
  LatchDirection latch_dir = LatchDirection::HostToDevice;

  bool operator==(const PortRegisters&) const = default;
};

// Host-side register writes. Both return the updated copy.
// write_data throws DirectionError while the latch faces the host.
PortRegisters write_data(PortRegisters regs, std::uint8_t value);
// Throws RangeError if value has bits above the 4 control lines.
PortRegisters write_control(PortRegisters regs, std::uint8_t value);
// Status lines are inputs to the host: always throws DirectionError.
PortRegisters write_status(PortRegisters regs, std::uint8_t value);

// Device-side counterparts, used by the bus when emulating the far end.
PortRegisters device_set_status(PortRegisters regs, std::uint8_t value);
PortRegisters device_drive_data(PortRegisters regs, std::uint8_t value);

inline bool data_line(const PortRegisters& regs, int line) {
  return ((regs.data >> line) & 1u) != 0;
}

enum class Signal {
  NStrobe,
  Data0,
  Data1,
  Data2,
  Data3,
  Data4,
  Data5,
  Data6,
  Data7,
  NAck,
  Busy,
  PaperOut,
  Select,
  NAutoLinefeed,
  NError,
  NInitialize,
  NSelectIn,
  Ground,
};

enum class PinDirection { In, Out, InOut, Gnd };
enum class Register { Data, Status, Control, Ground };

struct PinSignal {
  int pin_d25;
  // Centronics 36-pin number; ground pins span a range so carry none.
  std::optional<int> pin_centronics;
  Signal signal;
  PinDirection direction;
  Register reg;

  bool operator==(const PinSignal&) const = default;
};

// Throws RangeError outside 1-25.
PinSignal pin_lookup(int pin_d25);
const std::array<PinSignal, 25>& pin_table();

std::string_view to_string(Signal s);
std::string_view to_string(PinDirection d);
std::string_view to_string(Register r);

// The far end of the cable: the firmware board in this system.
class BusDevice {
 public:
  virtual ~BusDevice() = default;

  // nStrobe pulsed low with `byte` latched from D0-D7. Returns how long the
  // device holds Busy, or nullopt if it never releases it.
  virtual std::optional<std::chrono::microseconds> strobe(std::uint8_t byte) = 0;

  // Latch has turned device-to-host. Returns the byte the device drives,
  // or nullopt if it has nothing to present.
  virtual std::optional<std::uint8_t> drive() = 0;
};

struct BusTransaction {
  std::uint8_t command = 0;
  std::optional<std::uint8_t> response;
  Millis timestamp{0};
  // False when the handshake failed (the observer still sees the attempt).
  bool completed = true;
};

// Single-owner bus. transact() runs the full handshake:
//   host drives D0-D7, pulses nStrobe >= 1 us, device asserts Busy,
//   for sensor reads the latch flips device-to-host and the response is
//   sampled, Busy drops, host acknowledges on nAck, latch returns.
class ParallelBus {
 public:
  using Observer = std::function<void(const BusTransaction&)>;

  ParallelBus(BusDevice& device, const Clock& clock,
              std::chrono::microseconds timeout = std::chrono::milliseconds{100});

  ParallelBus(const ParallelBus&) = delete;
  ParallelBus& operator=(const ParallelBus&) = delete;

  // Throws BusBusyError if a transaction is in flight, TimeoutError if the
  // device never becomes ready within the timeout.
  BusTransaction transact(const Command& command);
  BusTransaction transact(std::uint8_t raw);

  // Raw host write to the data register, outside any transaction.
  void host_write(std::uint8_t value);

  PortRegisters registers() const { return regs_; }
  bool in_flight() const { return in_flight_.load(); }
  std::chrono::microseconds timeout() const { return timeout_; }
  void set_timeout(std::chrono::microseconds t) { timeout_ = t; }
  std::uint16_t base_address() const { return kLpt1Base; }

  // Called after every transaction attempt that reached the wire.
  void set_observer(Observer obs) { observer_ = std::move(obs); }

  // Completed transactions.
  std::uint64_t transaction_count() const { return count_; }

 private:
  BusDevice& device_;
  const Clock& clock_;
  std::chrono::microseconds timeout_;
  PortRegisters regs_;
  std::atomic<bool> in_flight_{false};
  Observer observer_;
  std::uint64_t count_ = 0;

  BusTransaction handshake(std::uint8_t raw);
};

}  // namespace cw
