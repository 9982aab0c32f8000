#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace patentscape::detail {

// Splits [0, n) into at most `workers` contiguous chunks and runs
// fn(worker_index, begin, end) on each. Chunk boundaries depend only on
// (n, workers), so any per-chunk state that is later merged in worker
// order yields results that are reproducible for a fixed worker count.
template <class Fn>
void parallel_chunks(std::size_t n, std::size_t workers, Fn&& fn) {
    if (workers <= 1 || n <= 1) {
        if (n > 0) fn(std::size_t(0), std::size_t(0), n);
        return;
    }
    workers = std::min(workers, n);
    std::size_t base = n / workers;
    std::size_t extra = n % workers;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    std::size_t begin = 0;
    for (std::size_t w = 0; w < workers; ++w) {
        std::size_t len = base + (w < extra ? 1 : 0);
        std::size_t end = begin + len;
        threads.emplace_back([&fn, w, begin, end] { fn(w, begin, end); });
        begin = end;
    }
    for (auto& t : threads) t.join();
}

}  // namespace patentscape::detail
