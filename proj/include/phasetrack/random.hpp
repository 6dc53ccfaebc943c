#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace phasetrack {

// splitmix64 finalizer; decorrelates consecutive trial indices.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
    return mix_seed(mix_seed(base) ^ (index * 0xd1b54a32d192ed03ULL));
}

/// Independent substreams of one seed. Phase increments and photocurrent
/// shot noise must never share a stream.
enum class Stream : std::uint32_t { phase = 1, measurement = 2 };

inline std::mt19937_64 make_engine(std::uint64_t seed, Stream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

/// Gaussian increments of variance dt from a dedicated engine.
class WienerIncrements {
public:
    WienerIncrements(std::uint64_t seed, Stream stream, double dt)
        : engine_(make_engine(seed, stream)), normal_(0.0, std::sqrt(dt)) {}

    double operator()() { return normal_(engine_); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

}  // namespace phasetrack
