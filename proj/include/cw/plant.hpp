#pragma once

// Thermal/humidity plant the sensors read and the relays load.
// Each casing (one row of nodes) relaxes first-order toward
// ambient + k * powered_nodes with time constant tau.

#include <optional>
#include <string>
#include <vector>

#include "cw/clock.hpp"
#include "cw/firmware.hpp"

namespace cw {

struct Casing {
  std::string id;
  std::vector<int> node_ids;
  double temp_c = 25.0;
  double humidity_rh = 45.0;
  double tau_s = 300.0;
  double k_c_per_node = 1.5;
  double ambient_c = 25.0;
  double humidity_drift_rh_per_s = 0.0;
};

struct ChannelBinding {
  int channel = 0;
  std::string casing_id;
  SensorKind kind = SensorKind::TemperatureC;
};

class Plant final : public AnalogInputs {
 public:
  // Throws RangeError unless casings partition nodes 1..node_count and every
  // binding refers to a known casing with a unique channel.
  Plant(std::vector<Casing> casings, std::vector<ChannelBinding> bindings,
        int node_count = kNodeCount);

  // 4 casings of 12 nodes, channel 2i = temperature and 2i+1 = humidity of
  // casing i.
  static Plant default_topology();

  // Explicit Euler; dt larger than the smallest tau is split into substeps.
  void step(double dt_s);

  void apply_relays(const RelayMatrix& matrix, const NodeMap& map);

  // Throws ChannelError for an unbound channel.
  double channel_value(int channel) const override;
  const ChannelBinding& binding(int channel) const;
  const std::vector<ChannelBinding>& bindings() const { return bindings_; }

  int node_count() const { return node_count_; }
  bool powered(int node) const;
  void set_powered(int node, bool on);
  int powered_in(const Casing& casing) const;
  std::vector<int> powered_nodes() const;

  const std::vector<Casing>& casings() const { return casings_; }
  const Casing& casing(const std::string& id) const;
  Casing& casing(const std::string& id);
  // Casing holding the node.
  const Casing& casing_of(int node) const;

  // Temperature the casing converges to under its current load.
  double steady_state_c(const Casing& casing) const;

  // One JSON object (no trailing newline) describing every casing and node.
  std::string snapshot_line(Millis ts) const;

 private:
  std::vector<Casing> casings_;
  std::vector<ChannelBinding> bindings_;
  std::vector<int> casing_by_node_;  // index node-1
  std::vector<bool> powered_;
  int node_count_;
};

}  // namespace cw
