#pragma once

// Append-only persistence: readings.jsonl and audit.jsonl under one
// directory, one JSON object per line, fsync'd once per batch.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cw/clock.hpp"
#include "cw/firmware.hpp"

namespace cw {

struct SensorReading {
  Millis ts{0};
  int channel = 0;
  std::string casing_id;
  SensorKind kind = SensorKind::TemperatureC;
  double value = 0.0;  // decode_reading(raw_code)
  std::uint8_t raw_code = 0;

  bool operator==(const SensorReading&) const = default;
};

enum class Outcome { Applied, Denied, Failed, Alert };

inline constexpr std::string_view kPolicyActor = "policy-engine";

struct AuditEvent {
  std::uint64_t seq = 0;  // assigned by the store
  Millis ts{0};
  std::string actor;
  // Wire byte of the power command; absent for alerts.
  std::optional<std::uint8_t> command;
  int node = 0;
  Outcome outcome = Outcome::Applied;
  std::string policy_id;
  std::string detail;

  bool operator==(const AuditEvent&) const = default;
};

std::string to_string(Outcome o);

nlohmann::json to_json(const SensorReading& r);
nlohmann::json to_json(const AuditEvent& e);
// Throw StorageError on malformed input.
SensorReading reading_from_json(const nlohmann::json& j);
AuditEvent audit_from_json(const nlohmann::json& j);

struct ReadingQuery {
  std::optional<int> channel;
  std::optional<Millis> since;  // inclusive
  std::optional<Millis> until;  // inclusive
  std::optional<std::size_t> last;
};

class Store {
 public:
  static constexpr const char* kReadingsFile = "readings.jsonl";
  static constexpr const char* kAuditFile = "audit.jsonl";

  // Creates the directory if needed and replays existing files. A torn last
  // line (crash mid-append) is dropped and truncated away. Throws
  // StorageError on unreadable or corrupt files.
  explicit Store(std::filesystem::path dir);
  ~Store();

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  // Durable on return. Throws RangeError if a timestamp does not advance
  // for its channel, StorageError on I/O failure.
  void record_readings(std::span<const SensorReading> batch);
  void record_reading(const SensorReading& r) { record_readings({&r, 1}); }

  // Assigns seq numbers; returns the stored events.
  std::vector<AuditEvent> record_audit(std::span<const AuditEvent> batch);

  // Time-ascending. Throws RangeError if since > until.
  std::vector<SensorReading> query_readings(const ReadingQuery& q = {}) const;
  std::vector<AuditEvent> query_audit(std::optional<Millis> since = std::nullopt,
                                      std::optional<std::size_t> last = std::nullopt) const;

  std::size_t reading_count() const;
  std::size_t audit_count() const;
  // Latest timestamp across both files, if any.
  std::optional<Millis> latest_timestamp() const;
  std::optional<SensorReading> latest_reading(int channel) const;

  const std::filesystem::path& dir() const { return dir_; }

 private:
  class File;

  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::vector<SensorReading> readings_;  // time order
  std::map<int, SensorReading> latest_;  // newest reading per channel
  std::vector<AuditEvent> audit_;
  std::unique_ptr<File> readings_file_;
  std::unique_ptr<File> audit_file_;
};

}  // namespace cw
