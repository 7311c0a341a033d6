#include "cw/plant.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <utility>

#include "cw/errors.hpp"

namespace cw {

Plant::Plant(std::vector<Casing> casings, std::vector<ChannelBinding> bindings, int node_count)
    : casings_(std::move(casings)),
      bindings_(std::move(bindings)),
      casing_by_node_(static_cast<std::size_t>(std::max(node_count, 0)), -1),
      powered_(static_cast<std::size_t>(std::max(node_count, 0)), false),
      node_count_(node_count) {
  if (node_count < 1 || node_count > kNodeCount) {
    throw RangeError("node count must be 1-48");
  }
  for (std::size_t i = 0; i < casings_.size(); ++i) {
    const auto& c = casings_[i];
    if (!(c.tau_s > 0.0)) throw RangeError("casing " + c.id + ": tau_s must be > 0");
    if (!(c.k_c_per_node >= 0.0)) throw RangeError("casing " + c.id + ": k_c_per_node must be >= 0");
    if (!std::isfinite(c.temp_c) || !std::isfinite(c.ambient_c)) {
      throw RangeError("casing " + c.id + ": temperatures must be finite");
    }
    if (c.humidity_rh < 0.0 || c.humidity_rh > 100.0) {
      throw RangeError("casing " + c.id + ": humidity must be within 0-100 %RH");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (casings_[j].id == c.id) throw RangeError("duplicate casing id " + c.id);
    }
    for (int node : c.node_ids) {
      if (node < 1 || node > node_count) {
        throw RangeError("casing " + c.id + ": node " + std::to_string(node) + " out of range");
      }
      int& slot = casing_by_node_[static_cast<std::size_t>(node - 1)];
      if (slot != -1) {
        throw RangeError("node " + std::to_string(node) + " is in casings " +
                         casings_[static_cast<std::size_t>(slot)].id + " and " + c.id);
      }
      slot = static_cast<int>(i);
    }
  }
  for (int node = 1; node <= node_count; ++node) {
    if (casing_by_node_[static_cast<std::size_t>(node - 1)] == -1) {
      throw RangeError("node " + std::to_string(node) + " is not in any casing");
    }
  }
  for (std::size_t i = 0; i < bindings_.size(); ++i) {
    const auto& b = bindings_[i];
    if (b.channel < 0 || b.channel >= kMaxChannels) {
      throw RangeError("channel " + std::to_string(b.channel) + " outside 0-15");
    }
    (void)casing(b.casing_id);
    for (std::size_t j = 0; j < i; ++j) {
      if (bindings_[j].channel == b.channel) {
        throw RangeError("channel " + std::to_string(b.channel) + " bound twice");
      }
    }
  }
}

Plant Plant::default_topology() {
  std::vector<Casing> casings;
  std::vector<ChannelBinding> bindings;
  for (int i = 0; i < 4; ++i) {
    Casing c;
    c.id = "row" + std::to_string(i + 1);
    for (int n = 1; n <= 12; ++n) c.node_ids.push_back(i * 12 + n);
    casings.push_back(c);
    bindings.push_back({2 * i, c.id, SensorKind::TemperatureC});
    bindings.push_back({2 * i + 1, c.id, SensorKind::HumidityRH});
  }
  return Plant(std::move(casings), std::move(bindings));
}

double Plant::steady_state_c(const Casing& c) const {
  return c.ambient_c + c.k_c_per_node * powered_in(c);
}

void Plant::step(double dt_s) {
  if (!(dt_s > 0.0)) throw RangeError("dt must be > 0");
  double min_tau = dt_s;
  for (const auto& c : casings_) min_tau = std::min(min_tau, c.tau_s);
  const int substeps = static_cast<int>(std::ceil(dt_s / min_tau));
  const double h = dt_s / substeps;
  for (int s = 0; s < substeps; ++s) {
    for (auto& c : casings_) {
      const double target = steady_state_c(c);
      c.temp_c += h / c.tau_s * (target - c.temp_c);
      c.humidity_rh = std::clamp(c.humidity_rh + h * c.humidity_drift_rh_per_s, 0.0, 100.0);
    }
  }
}

void Plant::apply_relays(const RelayMatrix& matrix, const NodeMap& map) {
  for (int node = 1; node <= node_count_; ++node) {
    powered_[static_cast<std::size_t>(node - 1)] =
        matrix.state(map.address(node)) == RelayState::Closed;
  }
}

const ChannelBinding& Plant::binding(int channel) const {
  for (const auto& b : bindings_) {
    if (b.channel == channel) return b;
  }
  throw ChannelError("channel " + std::to_string(channel) + " not bound to a casing");
}

double Plant::channel_value(int channel) const {
  const auto& b = binding(channel);
  const auto& c = casing(b.casing_id);
  return b.kind == SensorKind::TemperatureC ? c.temp_c : c.humidity_rh;
}

bool Plant::powered(int node) const {
  if (node < 1 || node > node_count_) throw RangeError("node " + std::to_string(node) + " out of range");
  return powered_[static_cast<std::size_t>(node - 1)];
}

void Plant::set_powered(int node, bool on) {
  if (node < 1 || node > node_count_) throw RangeError("node " + std::to_string(node) + " out of range");
  powered_[static_cast<std::size_t>(node - 1)] = on;
}

int Plant::powered_in(const Casing& c) const {
  return static_cast<int>(std::count_if(c.node_ids.begin(), c.node_ids.end(),
                                        [&](int n) { return powered(n); }));
}

std::vector<int> Plant::powered_nodes() const {
  std::vector<int> out;
  for (int n = 1; n <= node_count_; ++n)
    if (powered(n)) out.push_back(n);
  return out;
}

const Casing& Plant::casing(const std::string& id) const {
  for (const auto& c : casings_)
    if (c.id == id) return c;
  throw RangeError("unknown casing " + id);
}

Casing& Plant::casing(const std::string& id) {
  return const_cast<Casing&>(std::as_const(*this).casing(id));
}

const Casing& Plant::casing_of(int node) const {
  if (node < 1 || node > node_count_) throw RangeError("node " + std::to_string(node) + " out of range");
  return casings_[static_cast<std::size_t>(casing_by_node_[static_cast<std::size_t>(node - 1)])];
}

std::string Plant::snapshot_line(Millis ts) const {
  nlohmann::json j;
  j["ts_ms"] = ts.count();
  auto& arr = j["casings"] = nlohmann::json::array();
  for (const auto& c : casings_) {
    arr.push_back({{"id", c.id},
                   {"temp_c", c.temp_c},
                   {"humidity_rh", c.humidity_rh},
                   {"powered", powered_in(c)},
                   {"steady_state_c", steady_state_c(c)}});
  }
  j["powered_nodes"] = powered_nodes();
  return j.dump();
}

}  // namespace cw
