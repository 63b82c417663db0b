#pragma once

#include <array>
#include <cstdint>

namespace rrt {

// Philox4x32-10 counter-based generator (Salmon et al., SC 2011). Each
// (key, counter) pair maps to an independent 128-bit block, so every
// periodogram bin can own a private stream with no shared cursor.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Buffered view of one bin's private stream. The key carries the seed, the
/// counter carries (bin index, window id, block index); successive draws
/// advance only the block index.
class CounterStream {
public:
    CounterStream(std::uint64_t seed, std::uint32_t window_id, std::uint64_t bin_index);

    std::uint32_t next_u32();

    /// Uniform on (0, 1), never exactly 0 or 1.
    double next_uniform();

    /// Standard normal via Box-Muller (both values used).
    double next_normal();

private:
    void refill();

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> base_;
    std::uint32_t block_ = 0;
    std::array<std::uint32_t, 4> buf_{};
    int pos_ = 4;
    double spare_ = 0;
    bool have_spare_ = false;
};

/// Gamma(shape = n_avg, scale = 1/n_avg) variate: the multiplicative noise of
/// an n_avg-segment averaged periodogram bin (chi^2 with 2 n_avg dof). Mean 1,
/// relative standard deviation 1/sqrt(n_avg). Marsaglia-Tsang squeeze, O(1)
/// per draw independent of n_avg.
double averaged_periodogram_noise(CounterStream& stream, double n_avg);

/// Stable mix of a master seed with sweep indices, for reproducible
/// parallel-safe per-point streams.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t env_index,
                          std::uint64_t power_index, std::uint64_t replicate_index);

}  // namespace rrt
