#include "dsv/parallel.hpp"

#include "dsv/errors.hpp"

#include <atomic>
#include <thread>
#include <vector>

namespace dsv {

namespace {
std::atomic<int> g_threads{1};
}

void set_worker_threads(int n) {
    if (n < 1) throw ValidationError("worker threads must be >= 1");
    g_threads.store(n);
}

int worker_threads() { return g_threads.load(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const int workers = g_threads.load();
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t k = std::min<std::size_t>(std::size_t(workers), n);
    std::vector<std::thread> pool;
    pool.reserve(k);
    for (std::size_t w = 0; w < k; ++w) {
        const std::size_t lo = n * w / k, hi = n * (w + 1) / k;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace dsv
