#include "cw/firmware.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <variant>

#include "cw/errors.hpp"

namespace cw {

namespace {

constexpr double kVoltsPerUnit = 0.010;  // 10 mV per degC, and per %RH
constexpr double kLm35MaxC = 150.0;

int flat_index(const RelayAddress& a) {
  return (static_cast<int>(a.mcu) * kOutPortsPerMcu + static_cast<int>(a.port)) * kBitsPerPort +
         a.bit;
}

bool valid_address(const RelayAddress& a) {
  return static_cast<int>(a.mcu) < kMcuCount && static_cast<int>(a.port) < kOutPortsPerMcu &&
         a.bit >= 0 && a.bit < kBitsPerPort;
}

}  // namespace

std::string to_string(Mcu m) { return m == Mcu::A ? "A" : "B"; }

std::string to_string(OutPort p) {
  switch (p) {
    case OutPort::P0: return "P0";
    case OutPort::P2: return "P2";
    case OutPort::P3: return "P3";
  }
  return "?";
}

NodeMap NodeMap::fill_order() {
  std::vector<RelayAddress> addrs;
  addrs.reserve(kNodeCount);
  for (int i = 0; i < kNodeCount; ++i) {
    const int per_mcu = kOutPortsPerMcu * kBitsPerPort;
    addrs.push_back({static_cast<Mcu>(i / per_mcu),
                     static_cast<OutPort>((i % per_mcu) / kBitsPerPort), i % kBitsPerPort});
  }
  return NodeMap(addrs);
}

NodeMap::NodeMap(const std::vector<RelayAddress>& addresses) {
  if (addresses.size() != static_cast<std::size_t>(kNodeCount)) {
    throw RangeError("node map needs exactly 48 entries");
  }
  by_bit_.fill(0);
  for (int node = 1; node <= kNodeCount; ++node) {
    const auto& a = addresses[static_cast<std::size_t>(node - 1)];
    if (!valid_address(a)) {
      throw RangeError("node " + std::to_string(node) + " mapped outside the relay ports");
    }
    int& slot = by_bit_[static_cast<std::size_t>(flat_index(a))];
    if (slot != 0) {
      throw RangeError("nodes " + std::to_string(slot) + " and " + std::to_string(node) +
                       " share relay " + to_string(a.mcu) + "." + to_string(a.port) + "." +
                       std::to_string(a.bit));
    }
    slot = node;
    by_node_[static_cast<std::size_t>(node - 1)] = a;
  }
}

RelayAddress NodeMap::address(int node) const {
  if (node < 1 || node > kNodeCount) {
    throw RangeError("node " + std::to_string(node) + " outside 1-48");
  }
  return by_node_[static_cast<std::size_t>(node - 1)];
}

int NodeMap::node_at(const RelayAddress& addr) const {
  if (!valid_address(addr)) throw RangeError("relay address out of range");
  return by_bit_[static_cast<std::size_t>(flat_index(addr))];
}

RelayMatrix RelayMatrix::all_closed() {
  RelayMatrix m;
  for (auto& mcu : m.ports_) mcu.fill(0xFF);
  return m;
}

RelayState RelayMatrix::state(const RelayAddress& a) const {
  const auto byte = ports_[static_cast<std::size_t>(a.mcu)][static_cast<std::size_t>(a.port)];
  return ((byte >> a.bit) & 1u) ? RelayState::Closed : RelayState::Open;
}

void RelayMatrix::set(const RelayAddress& a, RelayState s) {
  auto& byte = ports_[static_cast<std::size_t>(a.mcu)][static_cast<std::size_t>(a.port)];
  const auto mask = static_cast<std::uint8_t>(1u << a.bit);
  byte = s == RelayState::Closed ? (byte | mask) : (byte & ~mask);
}

std::uint8_t RelayMatrix::port_byte(Mcu mcu, OutPort port) const {
  return ports_[static_cast<std::size_t>(mcu)][static_cast<std::size_t>(port)];
}

int RelayMatrix::closed_count() const {
  int n = 0;
  for (const auto& mcu : ports_)
    for (auto b : mcu) n += std::popcount(b);
  return n;
}

int hamming_distance(const RelayMatrix& a, const RelayMatrix& b) {
  int n = 0;
  for (int m = 0; m < kMcuCount; ++m)
    for (int p = 0; p < kOutPortsPerMcu; ++p)
      n += std::popcount(static_cast<std::uint8_t>(
          a.port_byte(static_cast<Mcu>(m), static_cast<OutPort>(p)) ^
          b.port_byte(static_cast<Mcu>(m), static_cast<OutPort>(p))));
  return n;
}

RelayMatrix control_step(const RelayMatrix& matrix, const NodeMap& map, const Command& cmd) {
  RelayMatrix next = matrix;
  if (const auto* on = std::get_if<PowerOn>(&cmd)) {
    next.set(map.address(on->node), RelayState::Closed);
  } else if (const auto* off = std::get_if<PowerOff>(&cmd)) {
    next.set(map.address(off->node), RelayState::Open);
  } else {
    throw InvalidCommandError("not a power command: " + to_string(cmd));
  }
  return next;
}

std::string to_string(SensorKind k) {
  return k == SensorKind::TemperatureC ? "temperature" : "humidity";
}

double lm35_voltage(double temp_c) {
  return kVoltsPerUnit * std::clamp(temp_c, 0.0, kLm35MaxC);
}

double humidity_voltage(double rh) { return kVoltsPerUnit * std::clamp(rh, 0.0, 100.0); }

double amplify(double v, double gain, double rail) {
  return std::clamp(v * gain, 0.0, rail);
}

std::uint32_t adc_convert(double v, double vref, int bits) {
  const double full = static_cast<double>((1u << bits) - 1u);
  const double code = std::round(v / vref * full);
  return static_cast<std::uint32_t>(std::clamp(code, 0.0, full));
}

double ChainParams::lsb() const {
  return vref / static_cast<double>(full_scale()) / gain / kVoltsPerUnit;
}

SensorChain::SensorChain(ChainParams params, std::vector<SensorKind> kinds)
    : params_(params), kinds_(std::move(kinds)) {
  if (kinds_.size() > static_cast<std::size_t>(kMaxChannels)) {
    throw RangeError("at most 16 channels (two 8-input muxes)");
  }
  if (!(params_.gain >= 1.0) || !(params_.vref > 0.0) || !(params_.rail > 0.0)) {
    throw RangeError("sensor chain needs gain >= 1, vref > 0, rail > 0");
  }
  // The response travels back as one byte.
  if (params_.adc_bits < 1 || params_.adc_bits > 8) {
    throw RangeError("adc_bits must be 1-8");
  }
}

SensorKind SensorChain::kind(int channel) const {
  if (channel < 0 || channel >= channel_count()) {
    throw ChannelError("channel " + std::to_string(channel) + " not configured");
  }
  return kinds_[static_cast<std::size_t>(channel)];
}

std::uint32_t sensor_step(const SensorChain& chain, int channel, const AnalogInputs& plant) {
  const SensorKind kind = chain.kind(channel);
  const double value = plant.channel_value(channel);
  const double v = kind == SensorKind::TemperatureC ? lm35_voltage(value) : humidity_voltage(value);
  const auto& p = chain.params();
  return adc_convert(amplify(v, p.gain, p.rail), p.vref, p.adc_bits);
}

double decode_reading(std::uint32_t code, const ChainParams& p) {
  return static_cast<double>(code) * p.vref / static_cast<double>(p.full_scale()) / p.gain /
         kVoltsPerUnit;
}

FirmwareBoard::FirmwareBoard(NodeMap map, SensorChain chain, const AnalogInputs& plant)
    : map_(std::move(map)), chain_(std::move(chain)), plant_(plant) {}

std::optional<std::chrono::microseconds> FirmwareBoard::strobe(std::uint8_t byte) {
  p1_ = byte;
  pending_.reset();
  const Command cmd = decode_command(byte);
  if (is_power_command(cmd)) {
    // Both relay MCUs see the byte; only the owner of the node's bit reacts.
    relays_ = control_step(relays_, map_, cmd);
    return kRelayBusy;
  }
  if (const auto* read = std::get_if<ReadSensor>(&cmd)) {
    pending_ = static_cast<std::uint8_t>(sensor_step(chain_, read->channel, plant_));
    return kConversionBusy;
  }
  ++ignored_;
  return kRelayBusy;
}

std::optional<std::uint8_t> FirmwareBoard::drive() {
  auto out = pending_;
  pending_.reset();
  return out;
}

}  // namespace cw
