#include "htlmine/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace htl {

int thread_count() {
    static const int n = [] {
        if (const char * env = std::getenv("HTLMINE_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) {
                return v;
            }
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : int(hw);
    }();
    return n;
}

void parallel_for_chunks(int64_t n, const std::function<void(int64_t, int64_t)> & fn) {
    if (n <= 0) {
        return;
    }
    const int workers = std::min<int64_t>(thread_count(), n);
    if (workers <= 1) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(size_t(workers - 1));
    const int64_t chunk = (n + workers - 1) / workers;
    for (int w = 1; w < workers; ++w) {
        const int64_t begin = w * chunk;
        const int64_t end = std::min<int64_t>(begin + chunk, n);
        if (begin >= end) {
            break;
        }
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    fn(0, std::min<int64_t>(chunk, n));
    for (auto & t : pool) {
        t.join();
    }
}

void parallel_for(int64_t n, const std::function<void(int64_t)> & fn) {
    parallel_for_chunks(n, [&fn](int64_t begin, int64_t end) {
        for (int64_t i = begin; i < end; ++i) {
            fn(i);
        }
    });
}

} // namespace htl
