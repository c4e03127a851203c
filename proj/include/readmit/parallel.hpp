#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace readmit {

/// Calls fn(i) for i in [0, n) on up to `threads` workers. Work is split by
/// index, so callers that store results per index get schedule-independent
/// output. The first exception thrown by any worker is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    threads = std::min(threads, n);
    std::exception_ptr error;
    std::mutex guard;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += threads) fn(i);
            } catch (...) {
                std::lock_guard lock(guard);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

/// READMIT_THREADS if set to a positive integer, else `fallback`.
inline std::size_t threads_from_env(std::size_t fallback = 1) {
    if (const char* v = std::getenv("READMIT_THREADS")) {
        try {
            const long n = std::stol(v);
            if (n > 0) return static_cast<std::size_t>(n);
        } catch (...) {
        }
    }
    return fallback;
}

}  // namespace readmit
