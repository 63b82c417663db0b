#include "rrt/rng.hpp"

#include <cmath>

namespace rrt {

namespace {

constexpr std::uint32_t kWeylA = 0x9E3779B9u;
constexpr std::uint32_t kWeylB = 0xBB67AE85u;
constexpr std::uint32_t kMulA = 0xD2511F53u;
constexpr std::uint32_t kMulB = 0xCD9E8D57u;

inline void mul_hi_lo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c,
                                        std::array<std::uint32_t, 2> k) {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mul_hi_lo(kMulA, c[0], hi0, lo0);
        mul_hi_lo(kMulB, c[2], hi1, lo1);
        c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
        k[0] += kWeylA;
        k[1] += kWeylB;
    }
    return c;
}

CounterStream::CounterStream(std::uint64_t seed, std::uint32_t window_id,
                             std::uint64_t bin_index) {
    key_ = {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    base_ = {static_cast<std::uint32_t>(bin_index), static_cast<std::uint32_t>(bin_index >> 32),
             window_id, 0};
}

void CounterStream::refill() {
    auto ctr = base_;
    ctr[3] = block_++;
    buf_ = philox4x32(ctr, key_);
    pos_ = 0;
}

std::uint32_t CounterStream::next_u32() {
    if (pos_ == 4) refill();
    return buf_[pos_++];
}

double CounterStream::next_uniform() {
    // (x + 0.5) / 2^32 lies strictly inside (0, 1)
    return (static_cast<double>(next_u32()) + 0.5) * (1.0 / 4294967296.0);
}

double CounterStream::next_normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925287 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

double averaged_periodogram_noise(CounterStream& stream, double n_avg) {
    // Marsaglia & Tsang (2000) for shape >= 1; n_avg >= 1 always holds here.
    const double d = n_avg - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        const double x = stream.next_normal();
        const double t = 1.0 + c * x;
        if (t <= 0) continue;
        const double v = t * t * t;
        const double u = stream.next_uniform();
        const double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v / n_avg;
        if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v / n_avg;
    }
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t env_index,
                          std::uint64_t power_index, std::uint64_t replicate_index) {
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ (env_index + 0x1000));
    h = splitmix64(h ^ (power_index + 0x2000));
    h = splitmix64(h ^ (replicate_index + 0x3000));
    return h;
}

}  // namespace rrt
