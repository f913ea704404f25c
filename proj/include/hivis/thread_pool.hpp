#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hivis {

// Fixed pool used to split row loops of multi-row forward passes. Work is
// assigned as contiguous static chunks and every output row is computed with
// the same instruction sequence as in a serial pass, so results are bitwise
// identical for any pool size.
class ThreadPool {
public:
    // Pool size comes from HIVIS_THREADS if set, else hardware_concurrency.
    static ThreadPool& instance();

    int size() const { return static_cast<int>(workers_.size()) + 1; }

    // Runs fn(begin, end) over [0, n) split across the pool; the caller
    // participates. Serial when n < min_rows or the pool has one slot.
    void for_rows(int64_t n, int64_t min_rows, const std::function<void(int64_t, int64_t)>& fn);

    ~ThreadPool();

private:
    struct State;

    explicit ThreadPool(int threads);
    void worker_loop(int worker_index);

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_start_;
    State* state_;
    int64_t n_ = 0;
    int parts_ = 1;
    const std::function<void(int64_t, int64_t)>* fn_ = nullptr;
};

inline void parallel_rows(int64_t n, int64_t min_rows, const std::function<void(int64_t, int64_t)>& fn) {
    ThreadPool::instance().for_rows(n, min_rows, fn);
}

}  // namespace hivis
