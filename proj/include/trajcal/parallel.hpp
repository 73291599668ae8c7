#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace trajcal {

/// Worker cap: min(hardware, TRAJCAL_THREADS) with a floor of 1.
inline unsigned worker_count() {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("TRAJCAL_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1 && static_cast<unsigned>(cap) < n) n = static_cast<unsigned>(cap);
    }
    return n;
}

// Runs fn(i) for i in [0, n). Tasks must be independent and write only to
// their own output slot; iteration order is then irrelevant to the result.
// If tasks throw, the exception of the lowest task index is rethrown after
// all workers finish, so failures are deterministic too.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const unsigned workers = worker_count();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const unsigned used = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    pool.reserve(used);
    for (unsigned w = 0; w < used; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (const auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
}

} // namespace trajcal
