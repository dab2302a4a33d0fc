#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sb {

// Error categories surfaced through the C API and mapped to CLI exit codes.
enum class ErrCode {
    Io = 1,
    Format = 2,
    Shape = 3,
    Infeasible = 4,
    InvalidArg = 5,
    Internal = 6,
};

class Error : public std::runtime_error {
public:
    Error(ErrCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrCode code() const { return code_; }

private:
    ErrCode code_;
};

[[noreturn]] inline void fail(ErrCode code, const std::string& msg) { throw Error(code, msg); }

// Deterministic RNG wrapper. All randomness in the library goes through this
// so that seeded runs are reproducible; uniform draws are derived from raw
// 64-bit output instead of std distributions, which keeps the stream stable
// across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) { return n ? gen_() % n : 0; }

    std::mt19937_64& raw() { return gen_; }

private:
    std::mt19937_64 gen_;
};

// 2-D buffer of activations, [channels][time] row-major.
template <class T>
struct Rows {
    int ch = 0;
    int len = 0;
    std::vector<T> data;

    Rows() = default;
    Rows(int channels, int length) : ch(channels), len(length), data((size_t)channels * length, T(0)) {}

    T* row(int c) { return data.data() + (size_t)c * len; }
    const T* row(int c) const { return data.data() + (size_t)c * len; }
    T& at(int c, int t) { return data[(size_t)c * len + t]; }
    T at(int c, int t) const { return data[(size_t)c * len + t]; }
    void zero() { std::fill(data.begin(), data.end(), T(0)); }
};

using Frames = Rows<float>;
using QFrames = Rows<int32_t>;

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

// Runs fn(i) for i in [0, n). With threads <= 1 this is a plain loop; results
// must not depend on execution order.
template <class Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const size_t n_workers = std::min<size_t>(n, (size_t)threads);
    pool.reserve(n_workers);
    for (size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace sb
