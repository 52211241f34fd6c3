#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace htl {

// splitmix64 stream. Self-contained so results do not depend on the
// standard library's <random> distributions, which are not portable
// across implementations. Every seeded artifact in the project comes
// from this generator.
class rng {
  public:
    explicit rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return double(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // uniform integer in [0, n), n > 0
    uint64_t uniform_int(uint64_t n) {
        // rejection sampling keeps the draw unbiased
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = next_u64();
        while (v >= limit) {
            v = next_u64();
        }
        return v % n;
    }

    bool bernoulli(double p) {
        return uniform() < p;
    }

    // Box-Muller, one value per call (the pair's sibling is discarded to
    // keep the stream position independent of call parity).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T> & v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = size_t(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    uint64_t state_;
};

// Derive an independent stream from a base seed and a few tags
// (epoch index, sample index, slot index, ...). Order-free so that
// parallel consumers stay deterministic.
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    rng r(base ^ (a * 0x9e3779b97f4a7c15ULL) ^ (b * 0xc2b2ae3d27d4eb4fULL) ^
          (c * 0x165667b19e3779f9ULL));
    return r.next_u64();
}

} // namespace htl
