#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "gff/common.hpp"

namespace gff {

/// Persistent worker pool backing parallel_for. Work is split into one
/// contiguous chunk per participant, so every element is computed by exactly
/// one thread with a fixed inner order; results are bit-identical for any
/// thread count.
class ThreadPool {
 public:
  explicit ThreadPool(int workers) {
    workers = workers < 0 ? 0 : workers;
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  ~ThreadPool() {
    {
      std::unique_lock lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  int workers() const { return static_cast<int>(threads_.size()); }

  /// Runs fn(begin, end) over a partition of [0, n) on workers plus the
  /// calling thread, blocking until every chunk is done.
  void run_chunks(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    const int parts = workers() + 1;
    if (n <= 0) return;
    if (parts == 1 || n == 1) {
      fn(0, n);
      return;
    }
    const std::int64_t chunk = (n + parts - 1) / parts;
    std::atomic<int> pending{0};
    {
      std::unique_lock lk(mu_);
      for (std::int64_t lo = chunk; lo < n; lo += chunk) {
        const std::int64_t hi = std::min(n, lo + chunk);
        pending.fetch_add(1, std::memory_order_relaxed);
        tasks_.emplace_back([&fn, lo, hi, &pending, this] {
          fn(lo, hi);
          if (pending.fetch_sub(1, std::memory_order_acq_rel) == 1) {
            // Taking the lock before notifying closes the window between the
            // waiter's predicate check and its sleep.
            std::lock_guard lk(mu_);
            done_cv_.notify_all();
          }
        });
      }
    }
    cv_.notify_all();
    fn(0, std::min(n, chunk));
    std::unique_lock lk(mu_);
    done_cv_.wait(lk, [&] { return pending.load(std::memory_order_acquire) == 0; });
  }

 private:
  void worker_loop() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [this] { return stop_ || !tasks_.empty(); });
        if (stop_ && tasks_.empty()) return;
        task = std::move(tasks_.back());
        tasks_.pop_back();
      }
      task();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::function<void()>> tasks_;
  std::vector<std::thread> threads_;
  bool stop_ = false;
};

namespace detail {
inline ThreadPool*& pool_slot() {
  static ThreadPool* pool = nullptr;
  return pool;
}
}  // namespace detail

/// Sets the number of threads used inside operation inner loops.
/// 1 (the default) runs everything on the calling thread.
inline void set_threads(int n) {
  auto*& pool = detail::pool_slot();
  delete pool;
  pool = nullptr;
  if (n > 1) pool = new ThreadPool(n - 1);
}

inline int threads() {
  auto* pool = detail::pool_slot();
  return pool ? pool->workers() + 1 : 1;
}

/// Deterministic parallel loop: fn(begin, end) over a partition of [0, n).
/// Chunks are contiguous and non-overlapping, so no two threads touch the
/// same output element.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  auto* pool = detail::pool_slot();
  if (!pool || n < 2) {
    if (n > 0) fn(std::int64_t{0}, n);
    return;
  }
  pool->run_chunks(n, std::function<void(std::int64_t, std::int64_t)>(std::forward<Fn>(fn)));
}

}  // namespace gff
