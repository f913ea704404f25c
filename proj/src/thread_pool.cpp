#include "hivis/thread_pool.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#define HIVIS_PAUSE() _mm_pause()
#else
#define HIVIS_PAUSE() std::this_thread::yield()
#endif

namespace hivis {

namespace {
int pool_threads() {
    if (const char* env = std::getenv("HIVIS_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(std::min(hc, 8u));
}

// Workers spin this many pauses before falling back to the condition
// variable; decode loops issue regions back to back, so the hot path never
// sleeps.
constexpr int kSpinLimit = 20000;
}  // namespace

struct ThreadPool::State {
    std::atomic<uint64_t> generation{0};
    std::atomic<int> pending{0};
    std::atomic<bool> stop{false};
};

ThreadPool& ThreadPool::instance() {
    static ThreadPool pool(pool_threads());
    return pool;
}

ThreadPool::ThreadPool(int threads) : state_(new State()) {
    for (int i = 1; i < threads; ++i) workers_.emplace_back([this, i] { worker_loop(i); });
}

ThreadPool::~ThreadPool() {
    state_->stop.store(true, std::memory_order_release);
    {
        std::lock_guard<std::mutex> lk(mu_);
    }
    cv_start_.notify_all();
    for (auto& w : workers_) w.join();
    delete state_;
}

void ThreadPool::worker_loop(int worker_index) {
    uint64_t seen = 0;
    for (;;) {
        int spins = 0;
        while (state_->generation.load(std::memory_order_acquire) == seen &&
               !state_->stop.load(std::memory_order_relaxed)) {
            if (++spins > kSpinLimit) {
                std::unique_lock<std::mutex> lk(mu_);
                cv_start_.wait(lk, [&] {
                    return state_->stop.load(std::memory_order_relaxed) ||
                           state_->generation.load(std::memory_order_acquire) != seen;
                });
                break;
            }
            HIVIS_PAUSE();
        }
        if (state_->stop.load(std::memory_order_relaxed)) return;
        seen = state_->generation.load(std::memory_order_acquire);
        int64_t n = n_;
        int parts = parts_;
        int64_t chunk = (n + parts - 1) / parts;
        int64_t b = std::min<int64_t>(n, worker_index * chunk);
        int64_t e = std::min<int64_t>(n, b + chunk);
        if (b < e) (*fn_)(b, e);
        state_->pending.fetch_sub(1, std::memory_order_acq_rel);
    }
}

void ThreadPool::for_rows(int64_t n, int64_t min_rows, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    int parts = size();
    if (parts == 1 || n < min_rows) {
        fn(0, n);
        return;
    }
    fn_ = &fn;
    n_ = n;
    parts_ = parts;
    state_->pending.store(static_cast<int>(workers_.size()), std::memory_order_release);
    {
        std::lock_guard<std::mutex> lk(mu_);
        state_->generation.fetch_add(1, std::memory_order_release);
    }
    cv_start_.notify_all();
    int64_t chunk = (n + parts - 1) / parts;
    fn(0, std::min<int64_t>(n, chunk));
    while (state_->pending.load(std::memory_order_acquire) != 0) HIVIS_PAUSE();
}

}  // namespace hivis
