#pragma once

#include <cstdint>
#include <cmath>
#include <numeric>
#include <vector>

namespace mic {

// Deterministic RNG. Transforms are hand-rolled (not std::distributions) so
// streams are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        s0_ = splitmix(seed);
        s1_ = splitmix(s0_);
        if (s0_ == 0 && s1_ == 0) s1_ = 1;
    }

    std::uint64_t next_u64() {
        // xorshift128+
        std::uint64_t x = s0_;
        const std::uint64_t y = s1_;
        s0_ = y;
        x ^= x << 23;
        s1_ = x ^ y ^ (x >> 17) ^ (y >> 26);
        return s1_ + y;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Fisher-Yates permutation of 0..n-1
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        std::iota(p.begin(), p.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

    // independent child stream, for per-item seeding
    Rng fork(std::uint64_t salt) { return Rng(next_u64() ^ splitmix(salt)); }

private:
    std::uint64_t s0_ = 0, s1_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;

    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }
};

}  // namespace mic
