#ifndef FMLOC_COMMON_HPP
#define FMLOC_COMMON_HPP

#include <atomic>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fmloc {

using cdouble = std::complex<double>;

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct SolveError : std::runtime_error {
    double condition_estimate;
    SolveError(const std::string& what, double cond)
        : std::runtime_error(what), condition_estimate(cond) {}
};

struct CheckError : std::runtime_error {
    explicit CheckError(const std::string& what) : std::runtime_error(what) {}
};

// Thread count resolution: explicit request > FMLOC_THREADS > hardware.
inline int resolve_threads(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("FMLOC_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

// Runs fn(block) for block = 0..n_blocks-1 on up to `threads` threads.
// Work is claimed via an atomic counter; results must be written to
// per-block slots so the outcome is independent of the thread count.
inline void parallel_blocks(std::size_t n_blocks, int threads,
                            const std::function<void(std::size_t)>& fn) {
    threads = resolve_threads(threads);
    if (threads <= 1 || n_blocks <= 1) {
        for (std::size_t b = 0; b < n_blocks; ++b) fn(b);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::atomic<bool> failed{false};
    std::mutex err_mtx;
    auto worker = [&]() {
        for (;;) {
            std::size_t b = next.fetch_add(1);
            if (b >= n_blocks || failed.load()) break;
            try {
                fn(b);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mtx);
                if (!failed.exchange(true)) err = std::current_exception();
            }
        }
    };
    std::size_t nt = std::min<std::size_t>(threads, n_blocks);
    pool.reserve(nt);
    for (std::size_t t = 0; t < nt; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (failed.load() && err) std::rethrow_exception(err);
}

// Deterministic reduction: sums slots in index order, pairwise.
inline double pairwise_sum(const double* v, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    std::size_t h = n / 2;
    return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

inline double pairwise_sum(const std::vector<double>& v) {
    return pairwise_sum(v.data(), v.size());
}

// Block layout for n samples in k blocks: first (n % k) blocks hold
// floor(n/k)+1 samples. Every sample belongs to exactly one block and the
// layout depends only on (n, k).
struct BlockLayout {
    std::uint64_t n = 0;
    std::uint64_t k = 1;
    BlockLayout() = default;
    BlockLayout(std::uint64_t n_, std::uint64_t k_) : n(n_), k(k_ == 0 ? 1 : k_) {
        if (k > n && n > 0) k = n;
    }
    std::uint64_t begin(std::uint64_t b) const {
        std::uint64_t base = n / k, rem = n % k;
        return b * base + std::min<std::uint64_t>(b, rem);
    }
    std::uint64_t end(std::uint64_t b) const { return begin(b + 1); }
    std::uint64_t size(std::uint64_t b) const { return end(b) - begin(b); }
};

inline std::uint64_t sqrt_block_count(std::uint64_t n) {
    std::uint64_t k = 1;
    while (k * k < n) ++k;  // ceil(sqrt(n))
    return k;
}

}  // namespace fmloc

#endif
