#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace hlora {

// Deterministic per-module random stream. All randomness in the project flows
// from one root seed; substreams are derived by hashing (seed, name) so adding
// a consumer never perturbs the draws of another.
//
// Distributions are hand-rolled on top of splitmix64 output: std::*_distribution
// is not bit-stable across standard libraries and we promise bit-identical runs.
class RngStream {
public:
    RngStream() : state_(0x9e3779b97f4a7c15ULL) {}
    explicit RngStream(uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {}

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (fresh pair each call, spare cached).
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare_ = mag * std::sin(two_pi * u2);
        has_spare_ = true;
        return mag * std::cos(two_pi * u2);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        // Rejection-free modulo is fine at our scales (n << 2^64); keep it simple.
        return next_u64() % n;
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Splits a root seed into named substreams (FNV-1a over the name, mixed with
// the root). Same (seed, name) always yields the same stream.
class SeedSplitter {
public:
    explicit SeedSplitter(uint64_t root_seed) : root_(root_seed) {}

    uint64_t derive(std::string_view name) const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : name) {
            h ^= static_cast<uint8_t>(c);
            h *= 0x100000001b3ULL;
        }
        return h ^ (root_ * 0xff51afd7ed558ccdULL + 0xc4ceb9fe1a85ec53ULL);
    }

    RngStream stream(std::string_view name) const { return RngStream(derive(name)); }

    uint64_t root() const { return root_; }

private:
    uint64_t root_;
};

}  // namespace hlora
