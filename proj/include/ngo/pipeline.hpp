#pragma once

// Producer-consumer data generation: N workers feed a bounded queue, the
// single training consumer drains it. Worker k owns items k, k+N, k+2N, ...
// so every (worker, sequence) pair is produced exactly once; a worker failure
// shuts the pipeline down and rethrows on the consumer side.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

namespace ngo {

template <class Item>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  bool push(Item item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  bool pop(Item& out) {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return false;
    out = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return true;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<Item> items_;
  bool closed_ = false;
};

template <class Item>
class Pipeline {
 public:
  // make(worker_id, item_index) builds one item; item_index is the global
  // sequence position, each handled by exactly one worker. With one worker,
  // consumption order is the strict sequence order. `first_index` supports
  // resuming at a known offset.
  Pipeline(int workers, std::int64_t total_items, std::size_t capacity,
           std::function<Item(int, std::int64_t)> make, std::int64_t first_index = 0)
      : queue_(capacity), make_(std::move(make)) {
    if (workers < 1) throw std::invalid_argument("pipeline needs at least one worker");
    remaining_ = workers;
    threads_.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      threads_.emplace_back([this, w, workers, total_items, first_index] {
        try {
          for (std::int64_t global = first_index + w; global < first_index + total_items;
               global += workers) {
            if (!queue_.push(make_(w, global))) return;  // closed early
          }
        } catch (...) {
          std::lock_guard lock(err_mu_);
          if (!error_) error_ = std::current_exception();
          queue_.close();
          return;
        }
        if (remaining_.fetch_sub(1) == 1) queue_.close();
      });
    }
  }

  ~Pipeline() {
    queue_.close();
    for (auto& t : threads_)
      if (t.joinable()) t.join();
  }

  // False when the stream is exhausted; rethrows the first worker error.
  bool next(Item& out) {
    if (queue_.pop(out)) return true;
    std::lock_guard lock(err_mu_);
    if (error_) std::rethrow_exception(error_);
    return false;
  }

 private:
  BoundedQueue<Item> queue_;
  std::function<Item(int, std::int64_t)> make_;
  std::vector<std::thread> threads_;
  std::atomic<int> remaining_{0};
  std::mutex err_mu_;
  std::exception_ptr error_;
};

}  // namespace ngo
