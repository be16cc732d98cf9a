#pragma once

#include <atomic>
#include <barrier>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "archprobe/error.hpp"
#include "archprobe/topo.hpp"

namespace archprobe {

/// Pinned worker threads driven in lock-step by a coordinator. Every worker
/// pins itself before the first barrier; run() releases all workers through
/// the start barrier and returns once all reached the done barrier.
class WorkerTeam {
 public:
  explicit WorkerTeam(std::vector<int> cpus)
      : cpus_(std::move(cpus)),
        start_(static_cast<std::ptrdiff_t>(cpus_.size() + 1)),
        done_(static_cast<std::ptrdiff_t>(cpus_.size() + 1)) {
    if (cpus_.empty()) throw Error(ErrorCode::InvalidArgument, "worker team needs at least one cpu");
    threads_.reserve(cpus_.size());
    for (std::size_t i = 0; i < cpus_.size(); ++i) {
      threads_.emplace_back([this, i] { worker_main(i); });
    }
    done_.arrive_and_wait();  // all workers pinned (or failed to)
    if (first_error_) {
      shutdown();
      std::rethrow_exception(first_error_);
    }
  }

  WorkerTeam(const WorkerTeam&) = delete;
  WorkerTeam& operator=(const WorkerTeam&) = delete;

  ~WorkerTeam() { shutdown(); }

  std::size_t size() const { return cpus_.size(); }
  const std::vector<int>& cpus() const { return cpus_; }

  /// Runs task(worker_index) on every worker and waits for all of them.
  /// The first exception thrown by a worker is rethrown here.
  void run(const std::function<void(std::size_t)>& task) {
    task_ = &task;
    start_.arrive_and_wait();
    done_.arrive_and_wait();
    task_ = nullptr;
    if (first_error_) {
      auto e = first_error_;
      first_error_ = nullptr;
      std::rethrow_exception(e);
    }
  }

 private:
  void worker_main(std::size_t index) {
    try {
      pin_current_thread(cpus_[index]);
    } catch (...) {
      record(std::current_exception());
    }
    done_.arrive_and_wait();
    for (;;) {
      start_.arrive_and_wait();
      if (stop_.load(std::memory_order_acquire)) return;
      try {
        (*task_)(index);
      } catch (...) {
        record(std::current_exception());
      }
      done_.arrive_and_wait();
    }
  }

  void record(std::exception_ptr e) {
    std::lock_guard lock(error_mutex_);
    if (!first_error_) first_error_ = e;
  }

  void shutdown() {
    if (threads_.empty()) return;
    stop_.store(true, std::memory_order_release);
    start_.arrive_and_wait();
    for (auto& t : threads_) t.join();
    threads_.clear();
  }

  std::vector<int> cpus_;
  std::barrier<> start_;
  std::barrier<> done_;
  std::vector<std::thread> threads_;
  const std::function<void(std::size_t)>* task_ = nullptr;
  std::atomic<bool> stop_{false};
  std::mutex error_mutex_;
  std::exception_ptr first_error_;
};

}  // namespace archprobe
