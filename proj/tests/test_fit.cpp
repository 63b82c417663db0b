#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rrt/errors.hpp"
#include "rrt/fit.hpp"
#include "rrt/spectrum.hpp"
#include "support.hpp"

using namespace rrt;

namespace {

SpectrumModel single_mode(double n_bar, double gamma_hz, double nu_m = 2.637e6,
                          double white = 0.05) {
    SpectrumModel m;
    m.primary = {nu_m, gamma_hz, n_bar, 1.0, 1.0};
    m.response.ref_freq_hz = nu_m;
    m.zp_ref_gamma_hz = gamma_hz;
    m.white_background = white;
    return m;
}

Periodogram anti_window(const SpectrumModel& m, double span, double rbw, double n_avg,
                        std::uint64_t seed, bool noiseless = false) {
    return synthesize_periodogram(m, Window::antistokes, span, rbw, n_avg, seed, noiseless);
}

FitWindow full_window(const Periodogram& pg) {
    return FitWindow{pg.freqs_hz.front(), pg.freqs_hz.back(), {}};
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences to 1e-6") {
    testsupport::Rand rng(404);
    for (int trial = 0; trial < 100; ++trial) {
        const std::array<double, 4> p = {rng.log_uniform(0.1, 100.0),
                                         rng.uniform(2.6e6, 2.7e6),
                                         rng.log_uniform(200.0, 2e4),
                                         rng.uniform(-1.0, 5.0)};
        const double f = p[1] + rng.uniform(-3.0, 3.0) * p[2];
        double v0;
        std::array<double, 4> grad;
        detail::lorentzian_model(f, p, v0, grad);
        for (int a = 0; a < 4; ++a) {
            std::array<double, 4> lo = p, hi = p;
            // frequency-like parameters need steps set by the linewidth, not
            // their own magnitude, to keep the truncation error below 1e-6
            const double h = (a == 1 || a == 2) ? 1e-4 * p[2]
                                                : std::max(std::abs(p[a]), 1.0) * 1e-6;
            lo[a] -= h;
            hi[a] += h;
            double vlo, vhi;
            std::array<double, 4> g_unused;
            detail::lorentzian_model(f, lo, vlo, g_unused);
            detail::lorentzian_model(f, hi, vhi, g_unused);
            const double fd = (vhi - vlo) / (2.0 * h);
            const double scale = std::max({std::abs(grad[a]), std::abs(fd), 1e-9});
            CHECK(std::abs(grad[a] - fd) / scale < 1e-6);
        }
    }

    // shared-parameter pair model, both sides
    for (int trial = 0; trial < 100; ++trial) {
        const std::array<double, 6> p = {rng.log_uniform(0.5, 50.0), rng.log_uniform(0.5, 50.0),
                                         rng.uniform(2.6e6, 2.7e6), rng.log_uniform(300.0, 2e4),
                                         rng.uniform(0.0, 2.0),     rng.uniform(0.0, 2.0)};
        const bool stokes = (trial % 2) == 0;
        const double f = (stokes ? -p[2] : p[2]) + rng.uniform(-3.0, 3.0) * p[3];
        double v0;
        std::array<double, 6> grad;
        detail::sideband_pair_model(f, stokes, p, v0, grad);
        for (int a = 0; a < 6; ++a) {
            std::array<double, 6> lo = p, hi = p;
            const double h = (a == 2 || a == 3) ? 1e-4 * p[3]
                                                : std::max(std::abs(p[a]), 1.0) * 1e-6;
            lo[a] -= h;
            hi[a] += h;
            double vlo, vhi;
            std::array<double, 6> g_unused;
            detail::sideband_pair_model(f, stokes, lo, vlo, g_unused);
            detail::sideband_pair_model(f, stokes, hi, vhi, g_unused);
            const double fd = (vhi - vlo) / (2.0 * h);
            const double scale = std::max({std::abs(grad[a]), std::abs(fd), 1e-9});
            CHECK(std::abs(grad[a] - fd) / scale < 1e-6);
        }
    }
}

TEST_CASE("initial guess") {
    SUBCASE("noiseless Lorentzian twenty bins wide") {
        const double gamma = 2000.0;  // 20 bins at rbw 100
        SpectrumModel m = single_mode(5.0, gamma);
        const Periodogram pg = anti_window(m, 30e3, 100.0, 400, 0, true);
        const auto g = initial_guess(pg, full_window(pg));
        CHECK(std::abs(g[1] - 2.637e6) <= 100.0);           // center within one bin
        CHECK(std::abs(g[2] - gamma) / gamma < 0.3);        // gamma within 30%
        CHECK(g[0] == doctest::Approx(5.0).epsilon(0.25));  // amplitude ballpark
    }

    SUBCASE("pure white noise raises FlatSpectrum") {
        SpectrumModel m = single_mode(0.0, 1000.0);
        m.primary.response_weight = 0.0;
        m.white_background = 1.0;
        int flat = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const Periodogram pg = anti_window(m, 30e3, 100.0, 400, seed);
            try {
                initial_guess(pg, full_window(pg));
            } catch (const FlatSpectrum&) {
                ++flat;
            }
        }
        CHECK(flat == 20);
    }

    SUBCASE("exclusion masks the second peak") {
        SpectrumModel m = single_mode(5.0, 1500.0);
        // a taller second feature 8 kHz above, implemented as a substrate line
        m.substrate = {{2.637e6 + 8e3, 1000.0, 12.0}};
        const Periodogram pg = anti_window(m, 30e3, 100.0, 400, 3, true);
        FitWindow w = full_window(pg);
        const auto g_both = initial_guess(pg, w);
        CHECK(std::abs(g_both[1] - (2.637e6 + 8e3)) < 500.0);  // taller peak wins
        w.exclusions = {{2.637e6 + 5e3, 2.637e6 + 11e3}};
        const auto g = initial_guess(pg, w);
        CHECK(std::abs(g[1] - 2.637e6) <= 100.0);
    }

    SUBCASE("too few bins") {
        SpectrumModel m = single_mode(5.0, 1500.0);
        const Periodogram pg = anti_window(m, 30e3, 100.0, 400, 3, true);
        CHECK_THROWS_AS(initial_guess(pg, FitWindow{2.636e6, 2.6365e6, {}}), InsufficientBins);
    }
}

TEST_CASE("noiseless fit recovers all four parameters to 1e-8") {
    SpectrumModel m = single_mode(3.7, 4200.0, 2.637e6, 0.13);
    const Periodogram pg = anti_window(m, 50e3, 100.0, 400, 0, true);
    const FitWindow w = full_window(pg);
    const LorentzianFit fit = fit_lorentzian(pg, w, initial_guess(pg, w));
    CHECK(fit.converged);
    CHECK(fit.amplitude == doctest::Approx(3.7).epsilon(1e-8));
    CHECK(fit.center_hz == doctest::Approx(2.637e6).epsilon(1e-8));
    CHECK(fit.gamma_hz == doctest::Approx(4200.0).epsilon(1e-8));
    CHECK(fit.background == doctest::Approx(0.13).epsilon(1e-6));
    CHECK_FALSE(fit.resolution_warning);
    // covariance is symmetric with positive diagonal
    for (int i = 0; i < 4; ++i) {
        CHECK(fit.covariance[i * 4 + i] > 0);
        for (int j = 0; j < 4; ++j)
            CHECK(fit.covariance[i * 4 + j] == doctest::Approx(fit.covariance[j * 4 + i]));
    }
}

TEST_CASE("amplitude coverage: reported 1-sigma holds in 63-73% of seeds") {
    SpectrumModel m = single_mode(8.0, 500.0, 2.637e6, 0.05);
    const Periodogram ideal = anti_window(m, 12e3, 100.0, 400, 0, true);
    const FitWindow w = full_window(ideal);
    int covered = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const Periodogram pg = anti_window(m, 12e3, 100.0, 400, seed);
        try {
            const LorentzianFit fit = fit_lorentzian(pg, w, initial_guess(pg, w));
            if (!fit.converged) continue;
            ++total;
            if (std::abs(fit.amplitude - 8.0) <= fit.sigma(0)) ++covered;
        } catch (const Error&) {
        }
    }
    REQUIRE(total > 950);
    const double frac = static_cast<double>(covered) / total;
    CHECK(frac >= 0.63);
    CHECK(frac <= 0.73);
}

TEST_CASE("narrow peaks carry a resolution warning") {
    SpectrumModel m = single_mode(40.0, 250.0);  // 2.5 bins FWHM
    const Periodogram pg = anti_window(m, 12e3, 100.0, 4000, 5);
    const FitWindow w = full_window(pg);
    const LorentzianFit fit = fit_lorentzian(pg, w, initial_guess(pg, w));
    CHECK(fit.converged);
    CHECK(fit.resolution_warning);
}

TEST_CASE("fit failure modes") {
    SpectrumModel m = single_mode(3.0, 3000.0);
    const Periodogram pg = anti_window(m, 40e3, 100.0, 400, 9);
    const FitWindow w = full_window(pg);
    SUBCASE("iteration cap raises NoConvergence") {
        FitOptions opts;
        opts.max_iters = 1;
        CHECK_THROWS_AS(fit_lorentzian(pg, w, {0.3, 2.647e6, 300.0, 1.0}, opts), NoConvergence);
    }
    SUBCASE("singular matrices are detected") {
        std::vector<double> singular = {1.0, 2.0, 2.0, 4.0};
        CHECK_THROWS_AS(detail::invert_symmetric(singular, 2), SingularNormalMatrix);
    }
    SUBCASE("non-finite guess is rejected") {
        CHECK_THROWS_AS(fit_lorentzian(pg, w, {1.0, std::nan(""), 100.0, 0.0}, {}), ConfigError);
    }
}

TEST_CASE("fit is gain-equivariant") {
    SpectrumModel m = single_mode(5.5, 2500.0, 2.637e6, 0.07);
    const Periodogram base = anti_window(m, 40e3, 100.0, 400, 17);
    SpectrumModel mg = m;
    mg.gain = 1e3;
    const Periodogram scaled = anti_window(mg, 40e3, 100.0, 400, 17);

    const FitWindow w = full_window(base);
    const LorentzianFit f1 = fit_lorentzian(base, w, initial_guess(base, w));
    const LorentzianFit f2 = fit_lorentzian(scaled, w, initial_guess(scaled, w));
    CHECK(f2.amplitude == doctest::Approx(1e3 * f1.amplitude).epsilon(1e-8));
    CHECK(f2.background == doctest::Approx(1e3 * f1.background).epsilon(1e-6));
    CHECK(f2.center_hz == doctest::Approx(f1.center_hz).epsilon(1e-10));
    CHECK(f2.gamma_hz == doctest::Approx(f1.gamma_hz).epsilon(1e-8));
}

TEST_CASE("widening a featureless window moves parameters by less than 1 sigma") {
    SpectrumModel m = single_mode(6.0, 2000.0);
    const Periodogram pg = anti_window(m, 50e3, 100.0, 400, 23);
    const FitWindow narrow{2.637e6 - 12e3, 2.637e6 + 12e3, {}};
    const FitWindow wide{2.637e6 - 24e3, 2.637e6 + 24e3, {}};
    const LorentzianFit fn = fit_lorentzian(pg, narrow, initial_guess(pg, narrow));
    const LorentzianFit fw = fit_lorentzian(pg, wide, initial_guess(pg, wide));
    CHECK(std::abs(fn.amplitude - fw.amplitude) < fn.sigma(0));
    CHECK(std::abs(fn.center_hz - fw.center_hz) < fn.sigma(1));
    CHECK(std::abs(fn.gamma_hz - fw.gamma_hz) < fn.sigma(2));
}

TEST_CASE("joint pair fit shares gamma and center magnitude") {
    SpectrumModel m = single_mode(2.0, 8000.0, 2.637e6, 0.04);
    const Periodogram st = synthesize_periodogram(m, Window::stokes, 60e3, 100.0, 4000, 3);
    const Periodogram at = synthesize_periodogram(m, Window::antistokes, 60e3, 100.0, 4000, 3);
    const FitWindow ws = full_window(st);
    const FitWindow wa = full_window(at);
    const LorentzianFit fs = fit_lorentzian(st, ws, initial_guess(st, ws));
    const LorentzianFit fa = fit_lorentzian(at, wa, initial_guess(at, wa));
    const SidebandPairFit joint = fit_sideband_pair(st, ws, fs, at, wa, fa);
    CHECK(joint.converged);
    CHECK(joint.gamma_hz == doctest::Approx(8000.0).epsilon(0.02));
    CHECK(joint.center_mag_hz == doctest::Approx(2.637e6).epsilon(1e-6));
    CHECK(joint.amp_stokes / joint.amp_antistokes == doctest::Approx(1.5).epsilon(0.03));
    // 6x6 covariance symmetric, diagonal positive
    for (int i = 0; i < 6; ++i) {
        CHECK(joint.covariance[i * 6 + i] > 0);
        for (int j = 0; j < 6; ++j)
            CHECK(joint.covariance[i * 6 + j] == doctest::Approx(joint.covariance[j * 6 + i]));
    }
}

TEST_CASE("background estimation") {
    SUBCASE("constant spectrum gives the exact level with shrinking sigma") {
        SpectrumModel m = single_mode(0.0, 1000.0);
        m.primary.response_weight = 0.0;
        m.white_background = 2.5;
        const Periodogram flat = anti_window(m, 40e3, 100.0, 400, 0, true);
        const auto est = estimate_background(flat, {{2.62e6, 2.65e6}});
        CHECK(est.level == doctest::Approx(2.5).epsilon(1e-12));
        CHECK(est.sigma == 0.0);
        CHECK_FALSE(est.contamination_warning);

        const Periodogram noisy = anti_window(m, 40e3, 100.0, 400, 1);
        const auto small = estimate_background(noisy, {{2.636e6, 2.638e6}});
        const auto large = estimate_background(noisy, {{2.62e6, 2.654e6}});
        CHECK(large.sigma < small.sigma);
    }

    SUBCASE("a quiet region sitting on a peak tail is flagged") {
        SpectrumModel m = single_mode(500.0, 4000.0);
        m.white_background = 0.05;
        const Periodogram pg = anti_window(m, 60e3, 100.0, 400, 2);
        // one region near the peak tail, one clean
        const auto est = estimate_background(
            pg, {{2.637e6 + 8e3, 2.637e6 + 12e3}, {2.637e6 + 24e3, 2.637e6 + 29e3}});
        CHECK(est.contamination_warning);
        const auto clean = estimate_background(
            pg, {{2.637e6 - 28e3, 2.637e6 - 23e3}, {2.637e6 + 23e3, 2.637e6 + 28e3}});
        CHECK_FALSE(clean.contamination_warning);
    }

    SUBCASE("gain scales the level") {
        SpectrumModel m = single_mode(1.0, 1000.0);
        m.white_background = 0.4;
        const Periodogram a = anti_window(m, 20e3, 100.0, 400, 5);
        SpectrumModel mg = m;
        mg.gain = 50.0;
        const Periodogram b = anti_window(mg, 20e3, 100.0, 400, 5);
        const auto ea = estimate_background(a, {{2.641e6, 2.646e6}});
        const auto eb = estimate_background(b, {{2.641e6, 2.646e6}});
        CHECK(eb.level == doctest::Approx(50.0 * ea.level).epsilon(1e-12));
    }

    SUBCASE("empty region throws") {
        SpectrumModel m = single_mode(1.0, 1000.0);
        const Periodogram pg = anti_window(m, 20e3, 100.0, 400, 5);
        CHECK_THROWS_AS(estimate_background(pg, {{9e6, 9.1e6}}), EmptyRegion);
    }
}

TEST_CASE("band integration") {
    SUBCASE("matches adaptive quadrature at fine resolution") {
        SpectrumModel m = single_mode(2.1, 500.0, 2.637e6, 0.0);
        const Periodogram pg = anti_window(m, 6e3, 1.0, 400, 0, true);
        const BandIntegral band = integrate_band(pg, 2.637e6, 2000.0, 0.0);
        auto f = [&](double x) { return ideal_psd(x, m); };
        const double oracle =
            testsupport::quadrature(f, 2.637e6 - 2000.5, 2.637e6 + 2000.5, 1e-10);
        CHECK(band.area == doctest::Approx(oracle).epsilon(1e-6));
        // truncated-area closed form: A * gamma * atan(2 hw / gamma)
        const double analytic = 2.1 * 500.0 * std::atan(2.0 * 2000.5 / 500.0);
        CHECK(band.area == doctest::Approx(analytic).epsilon(1e-4));
    }

    SUBCASE("white spectrum integrates to zero within errors") {
        SpectrumModel m = single_mode(0.0, 1000.0);
        m.primary.response_weight = 0.0;
        m.white_background = 1.0;
        int within3 = 0;
        const int trials = 500;
        for (std::uint64_t seed = 0; seed < trials; ++seed) {
            const Periodogram pg = anti_window(m, 20e3, 100.0, 400, seed);
            const BandIntegral band = integrate_band(pg, 2.637e6, 5e3, 1.0);
            if (std::abs(band.area) < 3.0 * band.sigma) ++within3;
        }
        CHECK(within3 >= static_cast<int>(0.985 * trials));
    }

    SUBCASE("additive over disjoint sub-bands") {
        SpectrumModel m = single_mode(3.0, 2000.0);
        const Periodogram pg = anti_window(m, 20e3, 100.0, 400, 77);
        const double c = 2.637e6;
        const BandIntegral whole = integrate_band(pg, c, 4000.0, 0.1);
        // split at a bin boundary: halves cover [c-4000, c) and [c, c+4000]
        const BandIntegral left = integrate_band(pg, c - 2025.0, 1975.0, 0.1);
        const BandIntegral right = integrate_band(pg, c + 2000.0, 2000.0, 0.1);
        CHECK(left.area + right.area == doctest::Approx(whole.area).epsilon(1e-12));
    }

    SUBCASE("symmetric classical model gives equal sideband areas") {
        SpectrumModel m = single_mode(1e7, 3000.0, 2.637e6, 0.05);
        const Periodogram st = synthesize_periodogram(m, Window::stokes, 20e3, 100.0, 400, 4);
        const Periodogram at = synthesize_periodogram(m, Window::antistokes, 20e3, 100.0, 400, 4);
        const BandIntegral is = integrate_band(st, -2.637e6, 2000.0, 0.05);
        const BandIntegral ia = integrate_band(at, 2.637e6, 2000.0, 0.05);
        CHECK(std::abs(is.area - ia.area) <
              3.0 * std::sqrt(is.sigma * is.sigma + ia.sigma * ia.sigma));
    }

    SUBCASE("band outside the window throws") {
        SpectrumModel m = single_mode(1.0, 1000.0);
        const Periodogram pg = anti_window(m, 20e3, 100.0, 400, 5);
        CHECK_THROWS_AS(integrate_band(pg, 2.637e6 + 9e3, 2e3, 0.0), BandOutsideWindow);
    }
}
