#pragma once

#include <cstdint>
#include <random>

#include "lvsmooth/numerics.hpp"

namespace lvsmooth {

// Deterministic, platform-stable random streams. std::normal_distribution is
// implementation-defined, so normals are always produced by the AS241 inverse
// CDF applied to explicitly constructed uniforms.

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline double u64_to_open_unit(std::uint64_t x) {
    // (0, 1): 53-bit mantissa, nudged off zero
    const double u = static_cast<double>(x >> 11) * 0x1.0p-53;
    return u > 0.0 ? u : 0x1.0p-54;
}

/// xoshiro256++ with splitmix64 seeding. Used for counter-derived Monte Carlo
/// substreams: stream(seed, path) is independent of evaluation order.
class Xoshiro256pp {
  public:
    explicit Xoshiro256pp(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& si : s_) si = splitmix64(sm);
    }
    Xoshiro256pp(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t sm = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
        for (auto& si : s_) si = splitmix64(sm);
    }

    std::uint64_t next() {
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

    double uniform() { return u64_to_open_unit(next()); }
    double normal() { return norm_ppf(uniform()); }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
};

/// Seeded Gaussian stream for synthetic-market noise. mt19937_64 is bit-stable
/// across conforming standard libraries.
class NormalStream {
  public:
    explicit NormalStream(std::uint64_t seed) : eng_(seed) {}
    double next(double mean, double stddev) {
        return mean + stddev * norm_ppf(u64_to_open_unit(eng_()));
    }

  private:
    std::mt19937_64 eng_;
};

} // namespace lvsmooth
