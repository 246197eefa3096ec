#include "tpr/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace tpr {

namespace {

std::atomic<int> g_threads{std::max(1, static_cast<int>(std::thread::hardware_concurrency()))};
thread_local bool t_in_parallel = false;

}  // namespace

int thread_count() { return g_threads.load(); }

void set_thread_count(int n) { g_threads.store(std::max(1, n)); }

void parallel_for(std::ptrdiff_t begin, std::ptrdiff_t end,
                  const std::function<void(std::ptrdiff_t)>& body) {
    const std::ptrdiff_t n = end - begin;
    if (n <= 0) return;
    const std::ptrdiff_t workers = std::min<std::ptrdiff_t>(thread_count(), n);
    if (workers <= 1 || t_in_parallel) {
        for (std::ptrdiff_t i = begin; i < end; ++i) body(i);
        return;
    }

    std::exception_ptr error;
    std::mutex error_mutex;
    auto run_block = [&](std::ptrdiff_t w) {
        t_in_parallel = true;
        const std::ptrdiff_t lo = begin + n * w / workers;
        const std::ptrdiff_t hi = begin + n * (w + 1) / workers;
        try {
            for (std::ptrdiff_t i = lo; i < hi; ++i) body(i);
        } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
        }
        t_in_parallel = false;
    };

    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (std::ptrdiff_t w = 1; w < workers; ++w) pool.emplace_back(run_block, w);
    run_block(0);
    pool.clear();
    if (error) std::rethrow_exception(error);
}

ChunkPlan::ChunkPlan(std::ptrdiff_t n_, std::ptrdiff_t max_chunks)
    : n(n_), chunks(std::max<std::ptrdiff_t>(1, std::min(n_, max_chunks))) {}

}  // namespace tpr
