#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace crossrec {

// splitmix64, used to derive independent substream seeds from one master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 1));
}

// FNV-1a 64-bit, used for manifest/latents fingerprints in output files.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xCBF29CE484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Deterministic random source. mt19937_64 output is fully specified by the
// standard; the derived draws below avoid std::*_distribution, whose
// algorithms are implementation-defined, so streams replay identically on
// every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, bound). Rejection sampling keeps the draw unbiased.
    std::uint64_t uniform_int(std::uint64_t bound) {
        const std::uint64_t span = (UINT64_MAX / bound) * bound;
        std::uint64_t v = next_u64();
        while (v >= span) v = next_u64();
        return v % bound;
    }

    int uniform_index(std::size_t bound) {
        return static_cast<int>(uniform_int(static_cast<std::uint64_t>(bound)));
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; u1 is shifted into (0, 1].
    double gaussian() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    // Fisher-Yates with the deterministic bounded draw above.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace crossrec
