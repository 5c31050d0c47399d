#include "burstforge/common.hpp"

#include <atomic>
#include <thread>
#include <vector>

namespace burstforge {

namespace {
std::atomic<int> g_threads{1};
}

void set_thread_count(int n) { g_threads.store(n < 1 ? 1 : n); }

int thread_count() { return g_threads.load(); }

void parallel_for(int64_t begin, int64_t end, const std::function<void(int64_t)>& fn) {
    const int64_t count = end - begin;
    if (count <= 0) return;
    int workers = thread_count();
    if (workers > count) workers = static_cast<int>(count);
    if (workers <= 1) {
        for (int64_t i = begin; i < end; ++i) fn(i);
        return;
    }
    // Static contiguous partition; each index is owned by exactly one worker.
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    const int64_t chunk = (count + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const int64_t lo = begin + w * chunk;
        const int64_t hi = lo + chunk < end ? lo + chunk : end;
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace burstforge
