#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace amf {

// All randomness in a run flows from one root seed through named sub-streams,
// so any component can be re-derived independently of evaluation order.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    // Derive a child stream for a named purpose. Stable across platforms.
    static Rng derive(uint64_t seed, const std::string& tag, uint64_t index = 0) {
        uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
        for (char c : tag) {
            h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
            h *= 0x100000001b3ull;
        }
        h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        h ^= index * 0xbf58476d1ce4e5b9ull;
        return Rng(splitmix(h));
    }

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }

    // Uniform integer in [0, n).
    int64_t randint(int64_t n) {
        return std::uniform_int_distribution<int64_t>(0, n - 1)(engine_);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::mt19937_64& engine() { return engine_; }

private:
    static uint64_t splitmix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::mt19937_64 engine_;
};

}  // namespace amf
