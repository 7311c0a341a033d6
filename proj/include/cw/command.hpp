#pragma once

// One-byte wire command shared by the host, the bus and both firmware roles.
//
//   raw 1..48     PowerOn(node = raw)
//   raw 129..176  PowerOff(node = raw - 128)
//   raw 200..215  ReadSensor(channel = raw - 200)
//   anything else Invalid

#include <cstdint>
#include <string>
#include <variant>

namespace cw {

inline constexpr int kNodeCount = 48;
inline constexpr int kMaxChannels = 16;

inline constexpr std::uint8_t kPowerOnBase = 0;
inline constexpr std::uint8_t kPowerOffBase = 128;
inline constexpr std::uint8_t kReadSensorBase = 200;

struct PowerOn {
  int node;
  bool operator==(const PowerOn&) const = default;
};

struct PowerOff {
  int node;
  bool operator==(const PowerOff&) const = default;
};

struct ReadSensor {
  int channel;
  bool operator==(const ReadSensor&) const = default;
};

struct Invalid {
  std::uint8_t raw;
  bool operator==(const Invalid&) const = default;
};

using Command = std::variant<PowerOn, PowerOff, ReadSensor, Invalid>;

// Total: every byte decodes to something, unmapped bytes to Invalid.
Command decode_command(std::uint8_t raw);

// Inverse of decode_command. Throws RangeError for a node or channel
// outside the wire table. Invalid encodes back to its raw byte.
std::uint8_t encode_command(const Command& cmd);

bool is_power_command(const Command& cmd);
bool is_sensor_read(const Command& cmd);

// "power_on(3)", "power_off(48)", "read_sensor(0)", "invalid(0x00)"
std::string to_string(const Command& cmd);

// Node targeted by a power command, 0 otherwise.
int command_node(const Command& cmd);

}  // namespace cw
