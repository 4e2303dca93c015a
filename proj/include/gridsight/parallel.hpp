#pragma once

#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace gridsight {

// Worker pool for data-parallel loops. Work is split into one contiguous
// chunk per worker and every output element is written by exactly one chunk,
// so results are bitwise identical for any thread count. Thread count comes
// from GRIDSIGHT_THREADS (default 1).
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool(env_thread_count());
    return pool;
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  // Calls fn(begin, end) on disjoint ranges covering [0, n).
  void run_chunked(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    const int nthreads = size();
    if (n <= 0) return;
    if (nthreads == 1 || n < 2 * nthreads) {
      fn(0, n);
      return;
    }
    std::int64_t chunk = (n + nthreads - 1) / nthreads;
    {
      std::unique_lock<std::mutex> lock(mu_);
      job_ = &fn;
      job_n_ = n;
      job_chunk_ = chunk;
      next_chunk_ = 1;  // chunk 0 runs on the calling thread
      pending_ = 0;
      for (std::size_t i = 0; i < workers_.size(); ++i) {
        std::int64_t b = static_cast<std::int64_t>(next_chunk_) * chunk;
        if (b < n) {
          ++next_chunk_;
          ++pending_;
        }
      }
      generation_++;
    }
    cv_.notify_all();
    fn(0, std::min(chunk, n));
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  explicit ThreadPool(int nthreads) {
    for (int i = 1; i < nthreads; ++i) {
      workers_.emplace_back([this, i] { worker_loop(i); });
    }
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lock(mu_);
      stop_ = true;
      generation_++;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  void worker_loop(int index) {
    std::uint64_t seen = 0;
    while (true) {
      const std::function<void(std::int64_t, std::int64_t)>* job = nullptr;
      std::int64_t b = 0, e = 0;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        if (job_ == nullptr) continue;
        std::int64_t chunk_index = index;  // worker i takes chunk i
        b = chunk_index * job_chunk_;
        e = std::min(b + job_chunk_, job_n_);
        if (b >= job_n_) continue;
        job = job_;
      }
      (*job)(b, e);
      {
        std::unique_lock<std::mutex> lock(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  static int env_thread_count() {
    const char* env = std::getenv("GRIDSIGHT_THREADS");
    if (env == nullptr) return 1;
    int n = std::atoi(env);
    return n < 1 ? 1 : n;
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::int64_t, std::int64_t)>* job_ = nullptr;
  std::int64_t job_n_ = 0;
  std::int64_t job_chunk_ = 0;
  int next_chunk_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

// parallel_for(n, fn): fn(i) for every i in [0, n), deterministic partition.
template <typename F>
void parallel_for(std::int64_t n, F&& fn) {
  std::function<void(std::int64_t, std::int64_t)> chunk_fn = [&fn](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) fn(i);
  };
  ThreadPool::instance().run_chunked(n, chunk_fn);
}

}  // namespace gridsight
