#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace alora {

// Deterministic random source. All transforms (uniform doubles, Box-Muller
// normals, Fisher-Yates shuffles) are implemented explicitly on top of
// mt19937_64 so that streams are reproducible bit-for-bit regardless of
// standard-library distribution internals.
class RandomSource {
public:
    explicit RandomSource(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi], both inclusive.
    int uniform_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // Box-Muller without the cached spare, so the call sequence maps 1:1
    // onto the engine stream.
    double normal(double mean = 0.0, double stddev = 1.0);

    // Fisher-Yates permutation of 0..n-1.
    std::vector<int> permutation(int n);

private:
    std::mt19937_64 engine_;
};

// Splits a master seed into an independent named stream. Stable across
// runs and platforms (FNV-1a over the name, finalized with splitmix64).
uint64_t derive_seed(uint64_t master, std::string_view name, uint64_t salt = 0);

}  // namespace alora
