#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace mmc {

// Deterministic xoshiro256++ generator. Used instead of <random> distributions so
// that streams are bit-identical across platforms and standard libraries.
class Rng {
  public:
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed);

    uint64_t next_u64();

    // uniform in (0, 1): never returns 0 or 1, safe under log(-log(u))
    double uniform();

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive range [lo, hi]
    int uniform_int(int lo, int hi);

    double normal(double mean = 0.0, double stddev = 1.0);

    // Gumbel(0,1) via inverse transform: -log(-log(u))
    double gumbel() { return -std::log(-std::log(uniform())); }

    // Named substream derived from (seed, name, index); independent of draw order
    // on the parent stream.
    static Rng substream(uint64_t seed, const std::string& name, uint64_t index = 0);

  private:
    uint64_t state_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mmc
