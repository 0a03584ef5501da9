// Copyright 2026 The NeoPlan Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Static-partition fork-join pool. Lane 0 is the calling thread; lanes
// 1..N-1 are workers, each fed through its own single-producer
// single-consumer ring. A parallel region splits [0, n) into N contiguous
// ranges of ceil(n / N) items and blocks until every lane has finished.

#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#if defined(__linux__)
#include <pthread.h>
#include <sched.h>
#endif

#include "neoplan/error.hpp"

namespace neoplan {

inline constexpr std::size_t kCacheLine = 64;

struct IndexRange {
  int64_t begin = 0;
  int64_t end = 0;
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Even contiguous split of [0, n) into `parts` ranges; trailing ranges may be
/// short or empty.
inline std::vector<IndexRange> partition_even(int64_t n, int parts) {
  std::vector<IndexRange> out(static_cast<std::size_t>(parts));
  int64_t chunk = parts > 0 ? (n + parts - 1) / parts : 0;
  for (int i = 0; i < parts; ++i) {
    int64_t b = std::min<int64_t>(n, chunk * i);
    int64_t e = std::min<int64_t>(n, chunk * (i + 1));
    out[static_cast<std::size_t>(i)] = {b, e};
  }
  return out;
}

/// Distinct (package, core) pairs among online CPUs; 0 when topology is not
/// exposed.
inline int physical_core_count_from_sysfs() {
  namespace fs = std::filesystem;
  std::error_code ec;
  const fs::path root("/sys/devices/system/cpu");
  if (!fs::exists(root, ec)) return 0;
  std::set<std::pair<int, int>> cores;
  for (const auto& entry : fs::directory_iterator(root, ec)) {
    auto name = entry.path().filename().string();
    if (name.size() < 4 || name.rfind("cpu", 0) != 0 ||
        name.find_first_not_of("0123456789", 3) != std::string::npos) {
      continue;
    }
    std::ifstream core(entry.path() / "topology" / "core_id");
    std::ifstream pkg(entry.path() / "topology" / "physical_package_id");
    int core_id = -1, pkg_id = -1;
    if (!(core >> core_id) || !(pkg >> pkg_id)) continue;
    std::ifstream online(entry.path() / "online");
    int is_online = 1;
    if (online) online >> is_online;
    if (is_online) cores.insert({pkg_id, core_id});
  }
  return static_cast<int>(cores.size());
}

inline int physical_core_count() {
  static const int count = [] {
    int n = physical_core_count_from_sysfs();
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    return std::max(n, 1);
  }();
  return count;
}

/// Worker count for a default-constructed pool: NEOPLAN_NUM_THREADS when set,
/// otherwise the physical core count.
inline int default_worker_count() {
  if (const char* env = std::getenv("NEOPLAN_NUM_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return physical_core_count();
}

namespace detail {

/// Bounded lock-free ring with exactly one pushing and one popping thread.
template <class T, std::size_t Capacity>
class SpscQueue {
  static_assert((Capacity & (Capacity - 1)) == 0, "capacity must be a power of two");

 public:
  bool push(const T& value) {
    auto head = head_.load(std::memory_order_relaxed);
    if (head - tail_cache_ == Capacity) {
      tail_cache_ = tail_.load(std::memory_order_acquire);
      if (head - tail_cache_ == Capacity) return false;
    }
    slots_[head & (Capacity - 1)] = value;
    head_.store(head + 1, std::memory_order_release);
    return true;
  }

  bool pop(T& value) {
    auto tail = tail_.load(std::memory_order_relaxed);
    if (tail == head_cache_) {
      head_cache_ = head_.load(std::memory_order_acquire);
      if (tail == head_cache_) return false;
    }
    value = slots_[tail & (Capacity - 1)];
    tail_.store(tail + 1, std::memory_order_release);
    return true;
  }

 private:
  alignas(kCacheLine) std::atomic<std::size_t> head_{0};
  std::size_t tail_cache_ = 0;  // producer-side
  alignas(kCacheLine) std::atomic<std::size_t> tail_{0};
  std::size_t head_cache_ = 0;  // consumer-side
  alignas(kCacheLine) std::array<T, Capacity> slots_{};
};

inline thread_local bool in_parallel_region = false;

}  // namespace detail

class ThreadPool {
 public:
  struct Options {
    int workers = 0;                  // 0: default_worker_count()
    bool pin = true;                  // best-effort core affinity
    bool allow_oversubscribe = false; // permit more lanes than physical cores
  };

  ThreadPool() : ThreadPool(Options{}) {}
  explicit ThreadPool(int workers) : ThreadPool(Options{workers, true, false}) {}

  explicit ThreadPool(Options options) {
    int n = options.workers > 0 ? options.workers : default_worker_count();
    if (!options.allow_oversubscribe) n = std::min(n, physical_core_count());
    size_ = std::max(n, 1);
    slots_ = std::vector<WorkerSlot>(static_cast<std::size_t>(size_ - 1));
    threads_.reserve(slots_.size());
    for (int lane = 1; lane < size_; ++lane) {
      threads_.emplace_back([this, lane] { worker_loop(lane); });
      if (options.pin) pinned_ += pin_thread(threads_.back(), lane) ? 1 : 0;
    }
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  ~ThreadPool() {
    for (std::size_t i = 0; i < slots_.size(); ++i) enqueue(i, Task{nullptr, nullptr, 0, 0});
    for (auto& t : threads_) t.join();
  }

  int size() const { return size_; }
  /// Workers that accepted a core binding.
  int pinned_workers() const { return pinned_; }

  /// Runs body(begin, end) over an even static split of [0, n). Exceptions
  /// from any lane are rethrown to the caller after every lane has joined.
  template <class Body>
  void parallel_for(int64_t n, Body&& body) {
    if (n <= 0) return;
    if (size_ == 1 || detail::in_parallel_region) {
      body(int64_t{0}, n);
      return;
    }
    std::lock_guard<std::mutex> region_lock(region_mutex_);
    using Fn = std::remove_reference_t<Body>;
    auto invoke = [](void* ctx, int64_t b, int64_t e) { (*static_cast<Fn*>(ctx))(b, e); };
    auto ranges = partition_even(n, size_);
    first_error_ = nullptr;
    failed_.store(false, std::memory_order_relaxed);
    pending_.store(size_ - 1, std::memory_order_release);
    for (int lane = 1; lane < size_; ++lane) {
      const auto& r = ranges[static_cast<std::size_t>(lane)];
      enqueue(static_cast<std::size_t>(lane - 1),
              Task{invoke, static_cast<void*>(std::addressof(body)), r.begin, r.end});
    }
    run_task(Task{invoke, static_cast<void*>(std::addressof(body)), ranges[0].begin, ranges[0].end},
             /*from_worker=*/false);
    for (int spin = 0; pending_.load(std::memory_order_acquire) != 0 && spin < 4096; ++spin) {
    }
    for (int v; (v = pending_.load(std::memory_order_acquire)) != 0;) pending_.wait(v);
    if (first_error_) std::rethrow_exception(std::exchange(first_error_, nullptr));
  }

 private:
  struct Task {
    void (*invoke)(void*, int64_t, int64_t);
    void* ctx;
    int64_t begin;
    int64_t end;
  };

  struct alignas(kCacheLine) WorkerSlot {
    detail::SpscQueue<Task, 4> queue;
    alignas(kCacheLine) std::atomic<uint32_t> signal{0};
  };

  void enqueue(std::size_t slot, const Task& task) {
    auto& s = slots_[slot];
    while (!s.queue.push(task)) std::this_thread::yield();
    s.signal.fetch_add(1, std::memory_order_release);
    s.signal.notify_one();
  }

  void run_task(const Task& task, bool from_worker) {
    if (task.begin < task.end && !failed_.load(std::memory_order_relaxed)) {
      detail::in_parallel_region = true;
      try {
        task.invoke(task.ctx, task.begin, task.end);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex_);
        if (!first_error_) first_error_ = std::current_exception();
        failed_.store(true, std::memory_order_relaxed);
      }
      detail::in_parallel_region = false;
    }
    if (from_worker && pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
      pending_.notify_one();
    }
  }

  void worker_loop(int lane) {
    auto& slot = slots_[static_cast<std::size_t>(lane - 1)];
    Task task{};
    for (;;) {
      uint32_t seen = slot.signal.load(std::memory_order_acquire);
      bool got = slot.queue.pop(task);
      for (int spin = 0; !got && spin < 2048; ++spin) got = slot.queue.pop(task);
      if (!got) {
        slot.signal.wait(seen, std::memory_order_acquire);
        continue;
      }
      if (task.invoke == nullptr) return;
      run_task(task, /*from_worker=*/true);
    }
  }

  static bool pin_thread([[maybe_unused]] std::thread& t, [[maybe_unused]] int lane) {
#if defined(__linux__)
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(static_cast<unsigned>(lane) % hw, &set);
    return pthread_setaffinity_np(t.native_handle(), sizeof(set), &set) == 0;
#else
    return false;
#endif
  }

  int size_ = 1;
  int pinned_ = 0;
  std::vector<WorkerSlot> slots_;
  std::vector<std::thread> threads_;
  std::mutex region_mutex_;
  alignas(kCacheLine) std::atomic<int> pending_{0};
  alignas(kCacheLine) std::atomic<bool> failed_{false};
  std::mutex error_mutex_;
  std::exception_ptr first_error_;
};

}  // namespace neoplan
