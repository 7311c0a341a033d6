#pragma once

// Emulated firmware behind the port: two relay MCUs (A and B) that share the
// command byte on P1 and drive relays on P0/P2/P3, and one sensor MCU that
// selects an input through two 8-way analog muxes, amplifies it and
// quantizes it.

#include <array>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cw/command.hpp"
#include "cw/port_bus.hpp"

namespace cw {

enum class Mcu : std::uint8_t { A = 0, B = 1 };
enum class OutPort : std::uint8_t { P0 = 0, P2 = 1, P3 = 2 };

inline constexpr int kMcuCount = 2;
inline constexpr int kOutPortsPerMcu = 3;
inline constexpr int kBitsPerPort = 8;

struct RelayAddress {
  Mcu mcu;
  OutPort port;
  int bit;

  bool operator==(const RelayAddress&) const = default;
};

std::string to_string(Mcu m);
std::string to_string(OutPort p);

// Bijection node 1-48 <-> relay output bit.
class NodeMap {
 public:
  // Nodes 1-24 on MCU A, 25-48 on MCU B; within an MCU P0 bits 0-7, then P2,
  // then P3.
  static NodeMap fill_order();

  // Throws RangeError unless `addresses` (index = node - 1) has 48 distinct
  // in-range entries.
  explicit NodeMap(const std::vector<RelayAddress>& addresses);

  RelayAddress address(int node) const;
  int node_at(const RelayAddress& addr) const;

 private:
  NodeMap() = default;
  std::array<RelayAddress, kNodeCount> by_node_{};
  std::array<int, kMcuCount * kOutPortsPerMcu * kBitsPerPort> by_bit_{};
};

enum class RelayState { Open, Closed };

// Output latches of both relay MCUs. A set bit is a closed relay.
class RelayMatrix {
 public:
  static RelayMatrix all_open() { return RelayMatrix{}; }
  static RelayMatrix all_closed();

  RelayState state(const RelayAddress& addr) const;
  void set(const RelayAddress& addr, RelayState s);

  std::uint8_t port_byte(Mcu mcu, OutPort port) const;
  int closed_count() const;

  bool operator==(const RelayMatrix&) const = default;

 private:
  std::array<std::array<std::uint8_t, kOutPortsPerMcu>, kMcuCount> ports_{};
};

int hamming_distance(const RelayMatrix& a, const RelayMatrix& b);

// Applies one power command. Idempotent, touches at most one bit.
// Throws InvalidCommandError for ReadSensor and Invalid.
RelayMatrix control_step(const RelayMatrix& matrix, const NodeMap& map, const Command& cmd);

// ---- sensor path -----------------------------------------------------------

enum class SensorKind { TemperatureC, HumidityRH };

std::string to_string(SensorKind k);

// LM35: 10 mV/degC from 0 V at 0 degC, input clamped to [0, 150] degC.
double lm35_voltage(double temp_c);
// Linear humidity transducer, 10 mV per %RH over [0, 100] %RH.
double humidity_voltage(double rh);
// Non-inverting amplifier clipped at the rail, never negative.
double amplify(double v, double gain, double rail);
// round(v / vref * (2^bits - 1)) clamped to the code range.
std::uint32_t adc_convert(double v, double vref, int bits);

struct ChainParams {
  double gain = 5.0;
  double vref = 5.0;
  double rail = 5.0;
  int adc_bits = 8;

  std::uint32_t full_scale() const { return (1u << adc_bits) - 1u; }
  // Engineering units per code.
  double lsb() const;
};

inline constexpr int kMuxInputs = 8;

// Sensor-MCU channel layout: channel c sits on mux bank c / 8, input c % 8.
class SensorChain {
 public:
  SensorChain() = default;
  // Throws RangeError for more than 16 channels or bad parameters.
  SensorChain(ChainParams params, std::vector<SensorKind> kinds);

  const ChainParams& params() const { return params_; }
  int channel_count() const { return static_cast<int>(kinds_.size()); }
  // Throws ChannelError for an unconfigured channel.
  SensorKind kind(int channel) const;
  int mux_bank(int channel) const { return channel / kMuxInputs; }
  int mux_input(int channel) const { return channel % kMuxInputs; }

 private:
  ChainParams params_;
  std::vector<SensorKind> kinds_;
};

// What the sensors are physically attached to.
class AnalogInputs {
 public:
  virtual ~AnalogInputs() = default;
  // Physical value (degC or %RH) at the sensor on `channel`.
  virtual double channel_value(int channel) const = 0;
};

// Mux select -> transducer -> amplifier -> ADC. Throws ChannelError.
std::uint32_t sensor_step(const SensorChain& chain, int channel, const AnalogInputs& plant);

// Host-side inverse of the chain, in degC or %RH.
double decode_reading(std::uint32_t code, const ChainParams& params);

// ---- the whole board ---------------------------------------------------------

// Firmware main loops for all three MCUs behind one port. Relay MCUs act on
// power commands for their own nodes; the sensor MCU answers sensor reads.
class FirmwareBoard final : public BusDevice {
 public:
  // Busy hold times; sensor reads include the ADC conversion.
  static constexpr std::chrono::microseconds kRelayBusy{10};
  static constexpr std::chrono::microseconds kConversionBusy{100};

  FirmwareBoard(NodeMap map, SensorChain chain, const AnalogInputs& plant);

  std::optional<std::chrono::microseconds> strobe(std::uint8_t byte) override;
  std::optional<std::uint8_t> drive() override;

  const RelayMatrix& relays() const { return relays_; }
  const NodeMap& node_map() const { return map_; }
  const SensorChain& chain() const { return chain_; }

  // Last byte seen on each MCU's P1.
  std::uint8_t p1() const { return p1_; }
  std::uint64_t ignored_commands() const { return ignored_; }

 private:
  NodeMap map_;
  SensorChain chain_;
  const AnalogInputs& plant_;
  RelayMatrix relays_;
  std::uint8_t p1_ = 0;
  std::optional<std::uint8_t> pending_;
  std::uint64_t ignored_ = 0;
};

}  // namespace cw
