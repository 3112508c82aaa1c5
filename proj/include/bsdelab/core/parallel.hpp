#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace bsdelab {

/// Number of worker threads used by path-parallel loops. Results never depend on it.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks are disjoint, so any
/// per-index output written by fn is identical for every thread count.
template <class Fn>
void parallel_chunks(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(thread_count(), std::max<std::size_t>(n, 1));
    if (workers <= 1 || n < 64) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&, w, b, e] {
            try {
                fn(b, e);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

} // namespace bsdelab
