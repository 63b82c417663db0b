#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "rrt/rng.hpp"

using namespace rrt;

TEST_CASE("philox4x32-10 known-answer vectors") {
    // Reference vectors from the Random123 distribution.
    auto r0 = philox4x32({0, 0, 0, 0}, {0, 0});
    CHECK(r0[0] == 0x6627e8d5u);
    CHECK(r0[1] == 0xe169c58du);
    CHECK(r0[2] == 0xbc57ac4cu);
    CHECK(r0[3] == 0x9b00dbd8u);

    const std::uint32_t m = 0xffffffffu;
    auto r1 = philox4x32({m, m, m, m}, {m, m});
    CHECK(r1[0] == 0x408f276du);
    CHECK(r1[1] == 0x41c83b0eu);
    CHECK(r1[2] == 0xa20bc7c6u);
    CHECK(r1[3] == 0x6d5451fdu);

    auto r2 = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                         {0xa4093822u, 0x299f31d0u});
    CHECK(r2[0] == 0xd16cfe09u);
    CHECK(r2[1] == 0x94fdccebu);
    CHECK(r2[2] == 0x5001e420u);
    CHECK(r2[3] == 0x24126ea1u);
}

TEST_CASE("counter streams are deterministic and keyed by bin and window") {
    CounterStream a(42, 0, 7);
    CounterStream b(42, 0, 7);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u32() == b.next_u32());

    CounterStream c(42, 1, 7), d(42, 0, 8), e(43, 0, 7);
    CounterStream ref(42, 0, 7);
    bool all_same_c = true, all_same_d = true, all_same_e = true;
    CounterStream c2(42, 1, 7), d2(42, 0, 8), e2(43, 0, 7), ref2(42, 0, 7);
    for (int i = 0; i < 16; ++i) {
        const std::uint32_t r = ref2.next_u32();
        all_same_c = all_same_c && (c2.next_u32() == r);
        all_same_d = all_same_d && (d2.next_u32() == r);
        all_same_e = all_same_e && (e2.next_u32() == r);
    }
    CHECK_FALSE(all_same_c);
    CHECK_FALSE(all_same_d);
    CHECK_FALSE(all_same_e);
}

TEST_CASE("uniforms stay inside (0,1) and normals have the right moments") {
    CounterStream s(7, 0, 0);
    double sum = 0, sum2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = s.next_uniform();
        CHECK(u > 0.0);
        CHECK(u < 1.0);
        sum += u;
        sum2 += u * u;
    }
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(sum2 / n - (sum / n) * (sum / n) == doctest::Approx(1.0 / 12.0).epsilon(0.02));

    CounterStream g(8, 0, 0);
    double gs = 0, gs2 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = g.next_normal();
        gs += z;
        gs2 += z * z;
    }
    CHECK(std::abs(gs / n) < 0.01);
    CHECK(gs2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("averaged periodogram noise has mean 1 and variance 1/n_avg") {
    for (double n_avg : {1.0, 4.0, 25.0, 400.0}) {
        double sum = 0, sum2 = 0;
        const int trials = 200000;
        for (int i = 0; i < trials; ++i) {
            CounterStream s(1234, 2, static_cast<std::uint64_t>(i));
            const double g = averaged_periodogram_noise(s, n_avg);
            CHECK(g > 0.0);
            sum += g;
            sum2 += g * g;
        }
        const double mean = sum / trials;
        const double var = sum2 / trials - mean * mean;
        CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
        CHECK(var == doctest::Approx(1.0 / n_avg).epsilon(0.05));
    }
}

TEST_CASE("seed derivation separates sweep indices") {
    CHECK(derive_seed(1, 0, 0, 0) == derive_seed(1, 0, 0, 0));
    std::vector<std::uint64_t> seen;
    for (std::uint64_t e = 0; e < 4; ++e)
        for (std::uint64_t p = 0; p < 6; ++p)
            for (std::uint64_t r = 0; r < 3; ++r) seen.push_back(derive_seed(99, e, p, r));
    for (std::size_t i = 0; i < seen.size(); ++i)
        for (std::size_t j = i + 1; j < seen.size(); ++j) CHECK(seen[i] != seen[j]);
}
