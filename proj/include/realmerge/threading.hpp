#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace realmerge {

// Static strided partition over [0, n). Each index is processed exactly once
// and writes only its own slot, so results are bit-identical for any thread
// count. Exceptions from workers are rethrown on the calling thread.
inline void parallel_for(size_t n, size_t threads, const std::function<void(size_t)> & fn) {
    if (threads <= 1 || n <= 1) {
        for (size_t i = 0; i < n; i++) {
            fn(i);
        }
        return;
    }
    size_t nw = threads < n ? threads : n;
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(nw);
    pool.reserve(nw);
    for (size_t w = 0; w < nw; w++) {
        pool.emplace_back([&, w]() {
            try {
                for (size_t i = w; i < n; i += nw) {
                    fn(i);
                }
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    }
    for (auto & t : pool) {
        t.join();
    }
    for (auto & e : errs) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

} // namespace realmerge
