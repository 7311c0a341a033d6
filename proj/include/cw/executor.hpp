#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <thread>
#include <type_traits>

namespace cw {

// One worker thread draining a FIFO of jobs. Everything that touches the
// bus, the firmware or the plant runs here, so those objects need no locks.
class Executor {
 public:
  Executor();
  ~Executor();

  Executor(const Executor&) = delete;
  Executor& operator=(const Executor&) = delete;

  // Runs f on the worker and waits for it. Called from the worker itself,
  // f runs inline. Exceptions propagate to the caller.
  template <class F>
  std::invoke_result_t<F> run(F&& f) {
    using R = std::invoke_result_t<F>;
    if (on_worker()) return std::forward<F>(f)();
    auto task = std::make_shared<std::packaged_task<R()>>(std::forward<F>(f));
    auto result = task->get_future();
    post([task] { (*task)(); });
    return result.get();
  }

  void post(std::function<void()> job);

  bool on_worker() const { return std::this_thread::get_id() == worker_.get_id(); }

  // Drains queued jobs and joins. Idempotent.
  void stop();

 private:
  void loop();

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace cw
