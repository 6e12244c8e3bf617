#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ntklab {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised when a Gram matrix cannot be factorized as positive definite.
struct RankDeficiencyError : std::runtime_error {
    RankDeficiencyError(const std::string& what, std::size_t rank, std::size_t size)
        : std::runtime_error(what + " (estimated rank " + std::to_string(rank) + " of " +
                             std::to_string(size) + ")"),
          estimated_rank(rank),
          dimension(size) {}
    std::size_t estimated_rank;
    std::size_t dimension;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConvergenceError : std::runtime_error {
    ConvergenceError(const std::string& what, double final_residual)
        : std::runtime_error(what), residual(final_residual) {}
    double residual;
};

// ---------------------------------------------------------------------------
// Seeding and random sources
// ---------------------------------------------------------------------------

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives a seed for a named sub-stream. Streams with different (tag, index)
/// pairs are statistically independent for practical purposes.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag,
                                    std::uint64_t index = 0) noexcept {
    return mix64(mix64(mix64(seed) ^ tag) ^ index);
}

/// Stream tags for derive_seed.
namespace stream {
inline constexpr std::uint64_t bank_directions = 0x101;
inline constexpr std::uint64_t bank_signs = 0x102;
inline constexpr std::uint64_t train_inputs = 0x201;
inline constexpr std::uint64_t train_noise = 0x202;
inline constexpr std::uint64_t test_inputs = 0x203;
inline constexpr std::uint64_t monte_carlo = 0x301;
inline constexpr std::uint64_t atoms = 0x401;
}  // namespace stream

/// A single-strand source of normal and uniform deviates.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) : engine_(seed) {}

    double gaussian() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    bool coin() { return (engine_() >> 63) != 0; }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Parallel helpers
// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Work items are
/// handed out in index order; callers that reduce must do so by index.
inline void parallel_for(std::size_t count, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    std::size_t next = 0;
    std::mutex lock;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (;;) {
                    std::size_t i;
                    {
                        std::lock_guard<std::mutex> guard(lock);
                        if (next >= count) return;
                        i = next++;
                    }
                    fn(i);
                }
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline std::size_t hardware_threads() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

}  // namespace ntklab
