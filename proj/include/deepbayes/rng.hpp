#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace deepbayes {

// Deterministic pseudo-random stream: xoshiro256** state seeded from a
// 64-bit seed and a 64-bit substream tag through splitmix64. Identical
// (seed, stream_id) pairs produce identical draw sequences on every
// platform; distinct stream ids give statistically independent streams,
// which is how the harness hands substreams to parallel cells.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    // Derive a child stream; child(tag) is a pure function of
    // (seed, stream_id, tag).
    RngStream child(std::uint64_t tag) const;

    std::uint64_t next_u64();

    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    // Uniform on [lo, hi).
    double uniform(double lo, double hi);
    // Standard normal via Box-Muller (no libstdc++ distributions: their
    // sequences are implementation-defined).
    double normal();
    // +1 or -1 with equal probability.
    double rademacher();
    // true with probability p.
    bool bernoulli(double p);
    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    std::vector<double> normals(std::size_t n);
    std::vector<double> uniforms(std::size_t n, double lo, double hi);

    // Deterministic in-place Fisher-Yates shuffle of indices [0, n).
    void shuffle(std::vector<std::size_t>& idx);

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t state_[4] = {0, 0, 0, 0};
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64 output function; used for seeding and for hashing ids into
// substream tags.
std::uint64_t splitmix64(std::uint64_t& state);

// Stable 64-bit hash of a string (FNV-1a), for deriving cell stream tags
// from artifact ids.
std::uint64_t hash64(const std::string& s);

}  // namespace deepbayes
