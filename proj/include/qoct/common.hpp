#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace qoct {

using cplx = std::complex<double>;

// tolerances shared across modules
constexpr double kHermitianTol = 1e-12;
constexpr double kUnitaryTol = 1e-10;

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : ValidationError {
    using ValidationError::ValidationError;
};

// thrown when the integrator cannot continue; keeps the last good time
struct IntegrationError : std::runtime_error {
    double t_reached;
    IntegrationError(const std::string& msg, double t)
        : std::runtime_error(msg), t_reached(t) {}
};

struct ConvergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic RNG. We avoid std::uniform_real_distribution on purpose:
// its output is implementation defined, and run records must be
// byte-identical for a given seed everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {  // splitmix64
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    double uniform() {  // [0, 1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform_symmetric(double b = 1.0) {  // [-b, b]
        return b * (2.0 * uniform() - 1.0);
    }

    // decorrelated stream for sub-task i (trial seeds, per-seed restarts)
    static std::uint64_t substream(std::uint64_t seed, std::uint64_t i) {
        Rng r(seed ^ (0x6a09e667f3bcc909ull + i * 0x9e3779b97f4a7c15ull));
        return r.next_u64();
    }

private:
    std::uint64_t state_;
};

// Chunked parallel loop. Each index is processed exactly once and workers
// write to disjoint slots only, so results do not depend on the schedule.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    int nw = std::min(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(nw);
    for (int w = 0; w < nw; ++w) {
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += nw) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

const char* version();  // build-time version tag

}  // namespace qoct
