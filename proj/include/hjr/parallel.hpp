#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hjr {

// Fork-join pool over contiguous index ranges. The partition of [0, n) is a
// pure function of (n, worker_count), so reductions that combine per-worker
// results in worker order are reproducible for a fixed worker count.
class ThreadPool {
 public:
  explicit ThreadPool(int workers = 0) {
    if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    workers_ = workers;
    for (int w = 1; w < workers_; ++w) {
      threads_.emplace_back([this, w] { worker_loop(w); });
    }
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mtx_);
      stop_ = true;
      ++epoch_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int worker_count() const { return workers_; }

  /// Runs fn(worker, begin, end) over a deterministic contiguous partition of
  /// [0, n). Worker 0 is the calling thread.
  void parallel_ranges(std::size_t n, const std::function<void(int, std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    if (workers_ == 1) {
      fn(0, 0, n);
      return;
    }
    {
      std::lock_guard<std::mutex> lk(mtx_);
      job_ = &fn;
      job_n_ = n;
      pending_ = workers_ - 1;
      ++epoch_;
    }
    cv_.notify_all();
    run_range(fn, n, 0);
    std::unique_lock<std::mutex> lk(mtx_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

  static std::pair<std::size_t, std::size_t> range_of(std::size_t n, int workers, int w) {
    std::size_t base = n / workers, rem = n % workers;
    std::size_t begin = static_cast<std::size_t>(w) * base + std::min<std::size_t>(w, rem);
    std::size_t len = base + (static_cast<std::size_t>(w) < rem ? 1 : 0);
    return {begin, begin + len};
  }

 private:
  void run_range(const std::function<void(int, std::size_t, std::size_t)>& fn, std::size_t n, int w) {
    auto [b, e] = range_of(n, workers_, w);
    if (b < e) fn(w, b, e);
  }

  void worker_loop(int w) {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(int, std::size_t, std::size_t)>* job = nullptr;
      std::size_t n = 0;
      {
        std::unique_lock<std::mutex> lk(mtx_);
        cv_.wait(lk, [&] { return stop_ || epoch_ != seen; });
        seen = epoch_;
        if (stop_) return;
        job = job_;
        n = job_n_;
      }
      if (job) run_range(*job, n, w);
      {
        std::lock_guard<std::mutex> lk(mtx_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  int workers_ = 1;
  std::vector<std::thread> threads_;
  std::mutex mtx_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int, std::size_t, std::size_t)>* job_ = nullptr;
  std::size_t job_n_ = 0;
  int pending_ = 0;
  std::uint64_t epoch_ = 0;
  bool stop_ = false;
};

}  // namespace hjr
