#pragma once

#include <cstdint>
#include <random>

namespace msms {

// One splitmix64 step; used to derive decorrelated substream seeds.
std::uint64_t splitmix64(std::uint64_t& state);

// Standard normal CDF and its inverse (Wichura's AS241, double precision).
double normal_cdf(double z);
double normal_quantile(double p);

// Seedable generator with an explicit uniform mapping so streams are
// bit-reproducible across platforms. Substream k of a base seed is an
// independent stream; subjects/draws index substreams so work can be
// parallelized without changing the results.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    static Rng substream(std::uint64_t base_seed, std::uint64_t stream);

    std::uint64_t next();
    double uniform();  // strictly inside (0, 1)
    double normal();   // inverse-CDF sampling

private:
    std::mt19937_64 gen_;
};

}  // namespace msms
