#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace uir {

inline std::size_t default_workers() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
}

// Runs fn(i) for i in [0, n). Work is strided across threads; callers that
// need determinism write to slot i of a preallocated buffer and reduce in
// index order afterwards, which makes the result independent of the worker
// count. The first exception thrown by any worker is rethrown after join.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& fn) {
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    if (workers > n) workers = n;

    std::vector<std::thread> threads;
    threads.reserve(workers);
    std::exception_ptr first_error;
    std::mutex err_mutex;

    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace uir
