#include "cw/command.hpp"

#include <cstdio>

#include "cw/errors.hpp"

namespace cw {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

Command decode_command(std::uint8_t raw) {
  if (raw >= kPowerOnBase + 1 && raw <= kPowerOnBase + kNodeCount) {
    return PowerOn{raw - kPowerOnBase};
  }
  if (raw >= kPowerOffBase + 1 && raw <= kPowerOffBase + kNodeCount) {
    return PowerOff{raw - kPowerOffBase};
  }
  if (raw >= kReadSensorBase && raw < kReadSensorBase + kMaxChannels) {
    return ReadSensor{raw - kReadSensorBase};
  }
  return Invalid{raw};
}

std::uint8_t encode_command(const Command& cmd) {
  auto check_node = [](int node) {
    if (node < 1 || node > kNodeCount) {
      throw RangeError("node " + std::to_string(node) + " outside 1-48");
    }
  };
  return std::visit(
      Overloaded{
          [&](const PowerOn& c) {
            check_node(c.node);
            return static_cast<std::uint8_t>(kPowerOnBase + c.node);
          },
          [&](const PowerOff& c) {
            check_node(c.node);
            return static_cast<std::uint8_t>(kPowerOffBase + c.node);
          },
          [](const ReadSensor& c) {
            if (c.channel < 0 || c.channel >= kMaxChannels) {
              throw RangeError("channel " + std::to_string(c.channel) + " outside 0-15");
            }
            return static_cast<std::uint8_t>(kReadSensorBase + c.channel);
          },
          [](const Invalid& c) { return c.raw; },
      },
      cmd);
}

bool is_power_command(const Command& cmd) {
  return std::holds_alternative<PowerOn>(cmd) || std::holds_alternative<PowerOff>(cmd);
}

bool is_sensor_read(const Command& cmd) { return std::holds_alternative<ReadSensor>(cmd); }

int command_node(const Command& cmd) {
  if (const auto* on = std::get_if<PowerOn>(&cmd)) return on->node;
  if (const auto* off = std::get_if<PowerOff>(&cmd)) return off->node;
  return 0;
}

std::string to_string(const Command& cmd) {
  return std::visit(
      Overloaded{
          [](const PowerOn& c) { return "power_on(" + std::to_string(c.node) + ")"; },
          [](const PowerOff& c) { return "power_off(" + std::to_string(c.node) + ")"; },
          [](const ReadSensor& c) { return "read_sensor(" + std::to_string(c.channel) + ")"; },
          [](const Invalid& c) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "invalid(0x%02x)", c.raw);
            return std::string(buf);
          },
      },
      cmd);
}

}  // namespace cw
