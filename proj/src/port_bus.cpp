#include "cw/port_bus.hpp"

#include <string>

#include "cw/errors.hpp"

namespace cw {

PortRegisters write_data(PortRegisters regs, std::uint8_t value) {
  if (regs.latch_dir != LatchDirection::HostToDevice) {
    throw DirectionError("data lines are driven by the device (latch device-to-host)");
  }
  regs.data = value;
  return regs;
}

PortRegisters write_control(PortRegisters regs, std::uint8_t value) {
  if ((value & ~kControlMask) != 0) {
    throw RangeError("control register has only 4 lines");
  }
  regs.control = value;
  return regs;
}

PortRegisters write_status(PortRegisters, std::uint8_t) {
  throw DirectionError("status lines are inputs to the host");
}

PortRegisters device_set_status(PortRegisters regs, std::uint8_t value) {
  if ((value & ~kStatusMask) != 0) {
    throw RangeError("status register has only 5 lines");
  }
  regs.status = value;
  return regs;
}

PortRegisters device_drive_data(PortRegisters regs, std::uint8_t value) {
  if (regs.latch_dir != LatchDirection::DeviceToHost) {
    throw DirectionError("data lines are driven by the host (latch host-to-device)");
  }
  regs.data = value;
  return regs;
}

namespace {

using D = PinDirection;
using R = Register;
using S = Signal;

constexpr std::array<PinSignal, 25> kPins = {{
    {1, 1, S::NStrobe, D::InOut, R::Control},
    {2, 2, S::Data0, D::Out, R::Data},
    {3, 3, S::Data1, D::Out, R::Data},
    {4, 4, S::Data2, D::Out, R::Data},
    {5, 5, S::Data3, D::Out, R::Data},
    {6, 6, S::Data4, D::Out, R::Data},
    {7, 7, S::Data5, D::Out, R::Data},
    {8, 8, S::Data6, D::Out, R::Data},
    {9, 9, S::Data7, D::Out, R::Data},
    {10, 10, S::NAck, D::In, R::Status},
    {11, 11, S::Busy, D::In, R::Status},
    {12, 12, S::PaperOut, D::In, R::Status},
    {13, 13, S::Select, D::In, R::Status},
    {14, 14, S::NAutoLinefeed, D::InOut, R::Control},
    {15, 32, S::NError, D::In, R::Status},
    {16, 31, S::NInitialize, D::InOut, R::Control},
    {17, 36, S::NSelectIn, D::InOut, R::Control},
    {18, std::nullopt, S::Ground, D::Gnd, R::Ground},
    {19, std::nullopt, S::Ground, D::Gnd, R::Ground},
    {20, std::nullopt, S::Ground, D::Gnd, R::Ground},
    {21, std::nullopt, S::Ground, D::Gnd, R::Ground},
    {22, std::nullopt, S::Ground, D::Gnd, R::Ground},
    {23, std::nullopt, S::Ground, D::Gnd, R::Ground},
    {24, std::nullopt, S::Ground, D::Gnd, R::Ground},
    {25, std::nullopt, S::Ground, D::Gnd, R::Ground},
}};

}  // namespace

const std::array<PinSignal, 25>& pin_table() { return kPins; }

PinSignal pin_lookup(int pin_d25) {
  if (pin_d25 < 1 || pin_d25 > 25) {
    throw RangeError("pin " + std::to_string(pin_d25) + " outside 1-25");
  }
  return kPins[static_cast<std::size_t>(pin_d25 - 1)];
}

std::string_view to_string(Signal s) {
  switch (s) {
    case S::NStrobe: return "nStrobe";
    case S::Data0: return "Data 0";
    case S::Data1: return "Data 1";
    case S::Data2: return "Data 2";
    case S::Data3: return "Data 3";
    case S::Data4: return "Data 4";
    case S::Data5: return "Data 5";
    case S::Data6: return "Data 6";
    case S::Data7: return "Data 7";
    case S::NAck: return "nAck";
    case S::Busy: return "Busy";
    case S::PaperOut: return "Paper Out";
    case S::Select: return "Select";
    case S::NAutoLinefeed: return "nAuto-Linefeed";
    case S::NError: return "nError / nFault";
    case S::NInitialize: return "nInitialize";
    case S::NSelectIn: return "nSelect-Printer / nSelect-In";
    case S::Ground: return "Ground";
  }
  return "?";
}

std::string_view to_string(PinDirection d) {
  switch (d) {
    case D::In: return "In";
    case D::Out: return "Out";
    case D::InOut: return "In/Out";
    case D::Gnd: return "Gnd";
  }
  return "?";
}

std::string_view to_string(Register r) {
  switch (r) {
    case R::Data: return "Data";
    case R::Status: return "Status";
    case R::Control: return "Control";
    case R::Ground: return "Ground";
  }
  return "?";
}

ParallelBus::ParallelBus(BusDevice& device, const Clock& clock,
                         std::chrono::microseconds timeout)
    : device_(device), clock_(clock), timeout_(timeout) {}

void ParallelBus::host_write(std::uint8_t value) { regs_ = write_data(regs_, value); }

BusTransaction ParallelBus::transact(const Command& command) {
  return transact(encode_command(command));
}

BusTransaction ParallelBus::transact(std::uint8_t raw) {
  bool expected = false;
  if (!in_flight_.compare_exchange_strong(expected, true)) {
    throw BusBusyError("bus transaction already in flight");
  }
  try {
    BusTransaction tx = handshake(raw);
    in_flight_.store(false);
    ++count_;
    if (observer_) observer_(tx);
    return tx;
  } catch (...) {
    // Whatever happened, the bus ends idle: latch host-facing, Busy low,
    // nStrobe and nAck released.
    regs_.latch_dir = LatchDirection::HostToDevice;
    regs_.status = static_cast<std::uint8_t>((regs_.status & ~kStatusBusy) | kStatusNAck);
    regs_.control |= kControlNStrobe;
    in_flight_.store(false);
    if (observer_) observer_(BusTransaction{raw, std::nullopt, clock_.now(), false});
    throw;
  }
}

BusTransaction ParallelBus::handshake(std::uint8_t raw) {
  regs_ = write_data(regs_, raw);

  regs_ = write_control(regs_, regs_.control & ~kControlNStrobe);
  auto busy_for = device_.strobe(raw);
  regs_ = device_set_status(regs_, regs_.status | kStatusBusy);
  regs_ = write_control(regs_, regs_.control | kControlNStrobe);

  if (!busy_for || *busy_for > timeout_) {
    throw TimeoutError("device held Busy past " + std::to_string(timeout_.count()) + " us");
  }

  BusTransaction tx;
  tx.command = raw;
  if (is_sensor_read(decode_command(raw))) {
    regs_.latch_dir = LatchDirection::DeviceToHost;
    auto value = device_.drive();
    if (!value) {
      throw TimeoutError("device never presented a response byte");
    }
    regs_ = device_drive_data(regs_, *value);
    tx.response = regs_.data;
  }

  regs_ = device_set_status(regs_, regs_.status & ~kStatusBusy);
  regs_ = device_set_status(regs_, regs_.status & ~kStatusNAck);
  regs_ = device_set_status(regs_, regs_.status | kStatusNAck);
  regs_.latch_dir = LatchDirection::HostToDevice;

  tx.timestamp = clock_.now();
  return tx;
}

}  // namespace cw
