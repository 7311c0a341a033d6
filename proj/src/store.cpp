#include "cw/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "cw/errors.hpp"

namespace cw {

using nlohmann::json;

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::Applied: return "applied";
    case Outcome::Denied: return "denied";
    case Outcome::Failed: return "failed";
    case Outcome::Alert: return "alert";
  }
  return "?";
}

namespace {

Outcome parse_outcome(const std::string& s) {
  if (s == "applied") return Outcome::Applied;
  if (s == "denied") return Outcome::Denied;
  if (s == "failed") return Outcome::Failed;
  if (s == "alert") return Outcome::Alert;
  throw StorageError("unknown outcome " + s);
}

std::string errno_text() { return std::strerror(errno); }

}  // namespace

json to_json(const SensorReading& r) {
  return {{"ts_ms", r.ts.count()},    {"channel", r.channel}, {"casing", r.casing_id},
          {"kind", to_string(r.kind)}, {"value", r.value},    {"raw_code", r.raw_code}};
}

json to_json(const AuditEvent& e) {
  json j = {{"seq", e.seq},
            {"ts_ms", e.ts.count()},
            {"actor", e.actor},
            {"node", e.node},
            {"outcome", to_string(e.outcome)}};
  if (e.command) {
    j["byte"] = *e.command;
    j["command"] = to_string(decode_command(*e.command));
  } else {
    j["byte"] = nullptr;
    j["command"] = nullptr;
  }
  j["policy"] = e.policy_id;
  j["detail"] = e.detail;
  return j;
}

SensorReading reading_from_json(const json& j) {
  try {
    SensorReading r;
    r.ts = Millis{j.at("ts_ms").get<std::int64_t>()};
    r.channel = j.at("channel").get<int>();
    r.casing_id = j.at("casing").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind != "temperature" && kind != "humidity") throw StorageError("unknown kind " + kind);
    r.kind = kind == "temperature" ? SensorKind::TemperatureC : SensorKind::HumidityRH;
    r.value = j.at("value").get<double>();
    r.raw_code = j.at("raw_code").get<std::uint8_t>();
    return r;
  } catch (const json::exception& e) {
    throw StorageError(std::string("malformed reading: ") + e.what());
  }
}

AuditEvent audit_from_json(const json& j) {
  try {
    AuditEvent e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.ts = Millis{j.at("ts_ms").get<std::int64_t>()};
    e.actor = j.at("actor").get<std::string>();
    if (!j.at("byte").is_null()) e.command = j.at("byte").get<std::uint8_t>();
    e.node = j.at("node").get<int>();
    e.outcome = parse_outcome(j.at("outcome").get<std::string>());
    e.policy_id = j.value("policy", "");
    e.detail = j.value("detail", "");
    return e;
  } catch (const json::exception& ex) {
    throw StorageError(std::string("malformed audit event: ") + ex.what());
  }
}

// Append-only file descriptor; every append is followed by fsync.
class Store::File {
 public:
  explicit File(const std::filesystem::path& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw StorageError(path.string() + ": " + errno_text());
  }
  ~File() {
    if (fd_ >= 0) ::close(fd_);
  }
  File(const File&) = delete;
  File& operator=(const File&) = delete;

  void append(const std::string& text) {
    const char* p = text.data();
    std::size_t left = text.size();
    while (left > 0) {
      const ssize_t n = ::write(fd_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw StorageError(path_.string() + ": write: " + errno_text());
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw StorageError(path_.string() + ": fsync: " + errno_text());
  }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

namespace {

// Parses every complete line; a trailing fragment without '\n' is a torn
// write and gets truncated off the file.
template <class T, class Parse>
std::vector<T> replay(const std::filesystem::path& path, Parse parse) {
  std::vector<T> out;
  if (!std::filesystem::exists(path)) return out;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError(path.string() + ": cannot open for replay");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  std::size_t pos = 0, line_no = 1;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      std::filesystem::resize_file(path, pos);
      break;
    }
    const std::string_view line(text.data() + pos, nl - pos);
    if (!line.empty()) {
      try {
        out.push_back(parse(json::parse(line)));
      } catch (const json::exception& e) {
        throw StorageError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      } catch (const StorageError& e) {
        throw StorageError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    pos = nl + 1;
    ++line_no;
  }
  return out;
}

}  // namespace

Store::Store(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw StorageError(dir_.string() + ": " + ec.message());

  readings_ = replay<SensorReading>(dir_ / kReadingsFile, reading_from_json);
  audit_ = replay<AuditEvent>(dir_ / kAuditFile, audit_from_json);
  std::stable_sort(readings_.begin(), readings_.end(),
                   [](const auto& a, const auto& b) { return a.ts < b.ts; });
  for (const auto& r : readings_) latest_.insert_or_assign(r.channel, r);

  readings_file_ = std::make_unique<File>(dir_ / kReadingsFile);
  audit_file_ = std::make_unique<File>(dir_ / kAuditFile);
}

Store::~Store() = default;

void Store::record_readings(std::span<const SensorReading> batch) {
  if (batch.empty()) return;
  std::lock_guard lock(mu_);
  std::map<int, Millis> last;
  for (const auto& [ch, r] : latest_) last.emplace(ch, r.ts);
  std::string text;
  for (const auto& r : batch) {
    auto [slot, fresh] = last.try_emplace(r.channel, r.ts);
    if (!fresh && r.ts <= slot->second) {
      throw RangeError("reading timestamps must increase per channel (channel " +
                       std::to_string(r.channel) + ")");
    }
    slot->second = r.ts;
    text += to_json(r).dump();
    text += '\n';
  }
  readings_file_->append(text);
  const auto old_size = static_cast<std::ptrdiff_t>(readings_.size());
  readings_.insert(readings_.end(), batch.begin(), batch.end());
  auto by_ts = [](const auto& a, const auto& b) { return a.ts < b.ts; };
  std::stable_sort(readings_.begin() + old_size, readings_.end(), by_ts);
  std::inplace_merge(readings_.begin(), readings_.begin() + old_size, readings_.end(), by_ts);
  for (const auto& r : batch) latest_.insert_or_assign(r.channel, r);
}

std::vector<AuditEvent> Store::record_audit(std::span<const AuditEvent> batch) {
  std::lock_guard lock(mu_);
  std::vector<AuditEvent> stored(batch.begin(), batch.end());
  std::uint64_t seq = audit_.empty() ? 0 : audit_.back().seq;
  std::string text;
  for (auto& e : stored) {
    e.seq = ++seq;
    text += to_json(e).dump();
    text += '\n';
  }
  if (!text.empty()) audit_file_->append(text);
  audit_.insert(audit_.end(), stored.begin(), stored.end());
  return stored;
}

std::vector<SensorReading> Store::query_readings(const ReadingQuery& q) const {
  if (q.since && q.until && *q.since > *q.until) {
    throw RangeError("since is after until");
  }
  std::lock_guard lock(mu_);
  std::vector<SensorReading> out;
  for (const auto& r : readings_) {
    if (q.channel && r.channel != *q.channel) continue;
    if (q.since && r.ts < *q.since) continue;
    if (q.until && r.ts > *q.until) continue;
    out.push_back(r);
  }
  if (q.last && out.size() > *q.last) {
    out.erase(out.begin(), out.end() - static_cast<std::ptrdiff_t>(*q.last));
  }
  return out;
}

std::vector<AuditEvent> Store::query_audit(std::optional<Millis> since,
                                           std::optional<std::size_t> last) const {
  std::lock_guard lock(mu_);
  std::vector<AuditEvent> out;
  for (const auto& e : audit_) {
    if (since && e.ts < *since) continue;
    out.push_back(e);
  }
  if (last && out.size() > *last) {
    out.erase(out.begin(), out.end() - static_cast<std::ptrdiff_t>(*last));
  }
  return out;
}

std::size_t Store::reading_count() const {
  std::lock_guard lock(mu_);
  return readings_.size();
}

std::size_t Store::audit_count() const {
  std::lock_guard lock(mu_);
  return audit_.size();
}

std::optional<Millis> Store::latest_timestamp() const {
  std::lock_guard lock(mu_);
  std::optional<Millis> latest;
  if (!readings_.empty()) latest = readings_.back().ts;
  for (const auto& e : audit_) {
    if (!latest || e.ts > *latest) latest = e.ts;
  }
  return latest;
}

std::optional<SensorReading> Store::latest_reading(int channel) const {
  std::lock_guard lock(mu_);
  const auto it = latest_.find(channel);
  if (it == latest_.end()) return std::nullopt;
  return it->second;
}

}  // namespace cw
