#include "bsdelab/core/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace bsdelab {

namespace {

std::size_t initial_threads() {
    if (const char* env = std::getenv("BSDE_LAB_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (...) {
        }
    }
    return 1;
}

std::atomic<std::size_t>& threads_setting() {
    static std::atomic<std::size_t> value{initial_threads()};
    return value;
}

} // namespace

std::size_t thread_count() { return threads_setting().load(); }

void set_thread_count(std::size_t n) { threads_setting().store(n == 0 ? 1 : n); }

} // namespace bsdelab
