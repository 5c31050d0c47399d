#pragma once

#include <cstdint>

namespace burstforge {

// splitmix64 counter generator (Steele/Lea/Flood mixing constants). Every
// randomized path in the library draws from this type so that results are
// reproducible from a single 64-bit seed.
//
// uniform() maps the top 53 bits to [0,1). gaussian() is an Irwin-Hall sum
// of 12 uniforms minus 6: all-integer-and-ordered-float arithmetic, so the
// byte streams it drives are portable.
class Splitmix64 {
public:
    explicit Splitmix64(uint64_t seed) : seed_(seed), state_(seed) {}

    uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double gaussian() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += uniform();
        return s - 6.0;
    }

    // Independent stream for work item `index` (frame, tensor, ...), derived
    // from the original seed so substreams do not depend on draw order.
    Splitmix64 substream(uint64_t index) const {
        return Splitmix64(mix(seed_ ^ (0x9E3779B97F4A7C15ULL * (index + 1))));
    }

    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    uint64_t seed_;
    uint64_t state_;
};

}  // namespace burstforge
