#include "cw/executor.hpp"

#include "cw/errors.hpp"

namespace cw {

Executor::Executor() : worker_([this] { loop(); }) {}

Executor::~Executor() { stop(); }

void Executor::post(std::function<void()> job) {
  {
    std::lock_guard lock(mu_);
    if (stopping_) throw Error("executor stopped");
    jobs_.push_back(std::move(job));
  }
  cv_.notify_one();
}

void Executor::stop() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable() && !on_worker()) worker_.join();
}

void Executor::loop() {
  for (;;) {
    std::function<void()> job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_ || !jobs_.empty(); });
      if (jobs_.empty()) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
    }
    job();
  }
}

}  // namespace cw
