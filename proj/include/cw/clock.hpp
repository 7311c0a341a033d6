#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>

namespace cw {

// Milliseconds since the clock's epoch (0 for the simulated clock).
using Millis = std::chrono::milliseconds;

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Millis now() const = 0;
  virtual bool simulated() const = 0;
};

// Advanced explicitly by whoever owns the simulation.
class SimClock final : public Clock {
 public:
  explicit SimClock(Millis start = Millis{0}) : now_(start.count()) {}

  Millis now() const override { return Millis{now_.load()}; }
  bool simulated() const override { return true; }

  void advance(Millis dt) { now_.fetch_add(dt.count()); }
  void set(Millis t) { now_.store(t.count()); }

 private:
  std::atomic<std::int64_t> now_;
};

class WallClock final : public Clock {
 public:
  Millis now() const override {
    return std::chrono::duration_cast<Millis>(
        std::chrono::system_clock::now().time_since_epoch());
  }
  bool simulated() const override { return false; }
};

}  // namespace cw
