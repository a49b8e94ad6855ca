#pragma once

#include <cmath>
#include <cstdint>

#include "normform/util.hpp"

// Self-contained RNG so runs are bit-reproducible across platforms and
// standard libraries. One root seed; per-stream sub-seeds are derived by a
// fixed hash, which keeps Monte Carlo reductions independent of worker count.

namespace normform {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace detail

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = detail::splitmix64(sm);
    }

    // Sub-stream derivation: mixes (seed, stream) through splitmix64 twice.
    static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
        std::uint64_t sm = seed ^ (0x5851f42d4c957f2dULL * (stream_id + 1));
        std::uint64_t h = detail::splitmix64(sm);
        h ^= detail::splitmix64(sm);
        return Rng(h);
    }

    std::uint64_t next_u64() {  // xoshiro256++
        auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on (0,1): 53-bit mantissa, zero excluded so logs stay finite.
    double uniform() {
        double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return u > 0.0 ? u : 0x1.0p-53;
    }

    double exponential(double rate) { return -std::log(uniform()) / rate; }

    // Beta(h+1, 1) draw: U^{1/(h+1)}; the coordinate prior marginal.
    double beta_power(double h) { return std::pow(uniform(), 1.0 / (h + 1.0)); }

    // Gamma with integer shape: sum of iid exponentials.
    double gamma_int_shape(int shape, double rate) {
        double s = 0.0;
        for (int i = 0; i < shape; ++i) s += exponential(rate);
        return s;
    }

    double normal() {  // Box-Muller, one value per pair to stay stateless
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace normform
