#pragma once

#include <cstdint>

namespace kvprefill {

// SplitMix64 (Steele, Lea, Flood 2014). Chosen because the full output
// sequence is specified by the algorithm alone, so seeded weights are
// bit-identical across platforms and standard libraries.
class SplitMix64 {
  public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1), 53 mantissa bits
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // uniform in [-1, 1)
    double next_symmetric() { return 2.0 * next_unit() - 1.0; }

  private:
    uint64_t state_;
};

// Derives an independent stream seed from a base seed and stream tags.
inline uint64_t mix_seed(uint64_t base, uint64_t a, uint64_t b = 0) {
    SplitMix64 g(base);
    uint64_t s = g.next() ^ (a * 0xd1342543de82ef95ULL);
    SplitMix64 h(s);
    return h.next() ^ (b * 0xaf251af3b0f025b5ULL);
}

}  // namespace kvprefill
