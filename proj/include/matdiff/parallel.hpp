#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace matdiff {

// Runs fn(i) for i in [0, n). Work items must write to disjoint locations;
// the arithmetic inside each item must not depend on the thread count, so
// results are identical for any max_threads (including 1).
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn,
                         size_t max_threads = 0) {
    if (n == 0) return;
    size_t hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    size_t workers = max_threads ? std::min(max_threads, hw) : hw;
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace matdiff
