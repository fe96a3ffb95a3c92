#include "deepbayes/rng.hpp"

#include <cmath>
#include <numbers>

#include "deepbayes/errors.hpp"

namespace deepbayes {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t hash64(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}
}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id) {
    // Mix seed and stream tag into one 64-bit value, then expand to the
    // four xoshiro words with splitmix64.
    std::uint64_t a = seed;
    std::uint64_t b = stream_id ^ 0xA3EC647659359ACDULL;
    std::uint64_t sub = splitmix64(a) ^ rotl(splitmix64(b), 32);
    state_[0] = splitmix64(sub);
    state_[1] = splitmix64(sub);
    state_[2] = splitmix64(sub);
    state_[3] = splitmix64(sub);
}

RngStream RngStream::child(std::uint64_t tag) const {
    std::uint64_t t = stream_id_;
    return RngStream(seed_, splitmix64(t) ^ splitmix64(tag));
}

std::uint64_t RngStream::next_u64() {
    // xoshiro256** step.
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // u1 in (0,1] keeps the log finite.
    const double u1 =
        (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

double RngStream::rademacher() {
    return (next_u64() & 1u) ? 1.0 : -1.0;
}

bool RngStream::bernoulli(double p) {
    return uniform() < p;
}

std::uint64_t RngStream::below(std::uint64_t n) {
    if (n == 0) throw NumericError("RngStream::below: n must be positive");
    // Rejection sampling to remove modulo bias.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
}

std::vector<double> RngStream::normals(std::size_t n) {
    std::vector<double> out(n);
    for (auto& v : out) v = normal();
    return out;
}

std::vector<double> RngStream::uniforms(std::size_t n, double lo, double hi) {
    std::vector<double> out(n);
    for (auto& v : out) v = uniform(lo, hi);
    return out;
}

void RngStream::shuffle(std::vector<std::size_t>& idx) {
    if (idx.empty()) return;
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(below(i + 1));
        std::swap(idx[i], idx[j]);
    }
}

}  // namespace deepbayes
