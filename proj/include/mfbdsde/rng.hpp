#pragma once

#include <cmath>
#include <cstdint>

namespace mfbdsde {

/// Counter-based Gaussian generator.
///
/// Every variate is a pure function of (seed, stream, group, particle, step),
/// so draws do not depend on evaluation order and any slice of an ensemble can
/// be regenerated independently.  The key is whitened with the splitmix64
/// finalizer, which has full avalanche; two decorrelated 64-bit words feed a
/// Box-Muller transform.
namespace rng {

enum class Stream : std::uint64_t {
    forward_driver  = 0x57, // per-particle Brownian increments
    backward_driver = 0xB5, // per-group Brownian increments
    auxiliary       = 0xA1, // perturbation directions, scrambles
};

constexpr std::uint64_t golden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

constexpr std::uint64_t key(std::uint64_t seed, Stream stream, std::uint64_t group,
                            std::uint64_t particle, std::uint64_t step) {
    std::uint64_t h = mix64(seed + golden);
    h = mix64(h ^ (static_cast<std::uint64_t>(stream) * golden));
    h = mix64(h ^ (group + golden));
    h = mix64(h ^ (particle + golden));
    h = mix64(h ^ (step + golden));
    return h;
}

/// Uniform in (0, 1]; the open lower end keeps log() finite below.
inline double uniform_open(std::uint64_t word) {
    return 1.0 - static_cast<double>(word >> 11) * 0x1.0p-53;
}

/// Standard normal variate for one key.
inline double normal(std::uint64_t k) {
    const double u1 = uniform_open(mix64(k ^ 0x2545f4914f6cdd1dULL));
    const double u2 = uniform_open(mix64(k ^ 0x9e6c63d0873d7cb1ULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

inline double normal(std::uint64_t seed, Stream stream, std::uint64_t group,
                     std::uint64_t particle, std::uint64_t step) {
    return normal(key(seed, stream, group, particle, step));
}

/// Derives an unrelated seed for a dependent sampling task (e.g. query particles
/// branched off a base population).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    return mix64(mix64(seed + golden) ^ mix64(salt * golden + 1));
}

} // namespace rng
} // namespace mfbdsde
