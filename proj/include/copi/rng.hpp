#pragma once

#include <cstdint>
#include <vector>

namespace copi {

/// Counter-based splittable random stream (SplitMix64 core).
///
/// Every stochastic operation in the project takes an explicit stream.
/// split(tag) derives an independent child stream without advancing the
/// parent, so instance i of epoch e always sees the same randomness no
/// matter how work is scheduled.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return finalize(state_);
    }

    /// Uniform in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Unbiased integer in [0, n), n > 0.
    uint64_t below(uint64_t n) {
        const uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    int index(int n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

    /// Independent child stream identified by tag; parent is not advanced.
    Rng split(uint64_t tag) const {
        return Rng(finalize(state_ ^ finalize(tag * 0xd1b54a32d192ed03ULL + 0x8bb84caf09c5c462ULL)));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static uint64_t finalize(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t state_;
};

}  // namespace copi
