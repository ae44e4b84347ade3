#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dfl {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Order-sensitive seed derivation.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x243f6a8885a308d3ull;
    for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal(double mean, double sd) { return std::normal_distribution<double>(mean, sd)(engine_); }
    bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }
    std::uint64_t next() { return engine_(); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace dfl
