#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace cxrkit {

// Runs fn(i) for i in [0, count) across `jobs` worker threads, collecting
// results by index so downstream consumers see a deterministic order. The
// first exception (lowest index) is rethrown.
template <typename Result, typename Fn>
std::vector<Result> parallel_map_indexed(std::size_t count, int jobs, Fn&& fn) {
    std::vector<Result> results(count);
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) results[i] = fn(i);
        return results;
    }
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                results[i] = fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return results;
}

}  // namespace cxrkit
