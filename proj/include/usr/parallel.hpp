// Minimal fork-join helper. Work is split into contiguous chunks with
// disjoint writes, so results do not depend on the thread count. Nested
// calls run serially.
#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace usr {

// Process-wide worker cap (defaults to the hardware concurrency).
void set_thread_count(int n);
int thread_count();

namespace detail {
inline thread_local bool in_parallel_region = false;
}

// body(begin, end) over [0, n), split into at most thread_count() chunks.
// grain caps the split so tiny workloads stay on the calling thread.
template <typename F>
void parallel_for(std::size_t n, F&& body, std::size_t grain = 1) {
    if (n == 0) return;
    std::size_t workers = static_cast<std::size_t>(thread_count());
    if (grain > 0) workers = std::min(workers, (n + grain - 1) / grain);
    if (workers <= 1 || detail::in_parallel_region) {
        body(std::size_t{0}, n);
        return;
    }

    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> threads;
    threads.reserve(workers - 1);
    std::exception_ptr error;
    std::mutex error_mutex;

    auto run = [&](std::size_t begin, std::size_t end) {
        detail::in_parallel_region = true;
        try {
            body(begin, end);
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!error) error = std::current_exception();
        }
        detail::in_parallel_region = false;
    };

    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        threads.emplace_back(run, begin, end);
    }
    run(0, std::min(chunk, n));
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace usr
