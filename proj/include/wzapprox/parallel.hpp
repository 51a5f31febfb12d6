#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace wz {

/// Runs body(i) for i in [0, count) on up to `threads` workers.
///
/// Work is claimed dynamically, so callers must write results into per-index
/// slots and reduce afterwards in index order. If several indices throw, the
/// exception from the lowest index is rethrown, so failures are reported the
/// same way regardless of thread count.
template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
    if (count == 0) return;
    const std::size_t workers = std::clamp<std::size_t>(threads == 0 ? 1 : threads, 1, count);
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> first_failure{count};
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= count) return;
            // Indices above a known failure cannot change which error is reported.
            if (i > first_failure.load(std::memory_order_relaxed)) continue;
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
                std::size_t seen = first_failure.load(std::memory_order_relaxed);
                while (i < seen && !first_failure.compare_exchange_weak(seen, i)) {
                }
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers - 1);
        for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
        work();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace wz
