#include "mfbdsde/parallel.hpp"

#include <atomic>
#include <thread>

namespace mfbdsde {

namespace {

double pairwise_block(const double* v, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_block(v, half) + pairwise_block(v + half, n - half);
}

std::atomic<unsigned> g_threads{1};

} // namespace

double pairwise_sum(std::span<const double> values) {
    return pairwise_block(values.data(), values.size());
}

void set_thread_count(unsigned n) { g_threads.store(n == 0 ? 1 : n); }

unsigned thread_count() { return g_threads.load(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    const unsigned workers = thread_count();
    if (workers <= 1 || n < 2) {
        fn(0, n);
        return;
    }
    const std::size_t chunks = std::min<std::size_t>(workers, n);
    const std::size_t base = n / chunks;
    const std::size_t extra = n % chunks;
    std::vector<std::thread> pool;
    pool.reserve(chunks);
    std::size_t begin = 0;
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t len = base + (c < extra ? 1 : 0);
        const std::size_t end = begin + len;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
        begin = end;
    }
    for (auto& t : pool) t.join();
}

} // namespace mfbdsde
