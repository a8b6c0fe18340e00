#pragma once

#include <cstdint>

namespace nuhyp {

/// Counter-based generator: the i-th draw of stream `key` is a pure function
/// of (key, i), so streams can be split per sample without shared state.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(mix(key ^ 0x6a09e667f3bcc909ULL)) {}

    /// Independent child stream, deterministic in (parent key, id).
    CounterRng split(std::uint64_t id) const { return CounterRng(mix(key_ + mix(id + 0x9e3779b97f4a7c15ULL))); }

    std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    std::uint64_t key() const { return key_; }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace nuhyp
