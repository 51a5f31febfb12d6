#pragma once

#include <cstdint>
#include <random>

namespace wz {

/// SplitMix64 finalizer; used only to derive well-separated engine seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed of stream `index` under `master`. Replica streams are a pure function of
/// (master, index), so results never depend on how replicas are scheduled.
constexpr std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return splitmix64(master ^ splitmix64(index ^ 0xD1B54A32D192ED03ULL));
}

/// Standard normal draws from one seeded stream.
///
/// Determinism holds per (seed, standard library): the engine is fully specified
/// by the standard, the normal transform is the library's.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : engine_(seed) {}

    double operator()() { return dist_(engine_); }

    std::uint64_t uniform_bits() { return engine_(); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace wz
