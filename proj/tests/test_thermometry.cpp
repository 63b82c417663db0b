#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rrt/errors.hpp"
#include "rrt/physics.hpp"
#include "rrt/thermometry.hpp"
#include "support.hpp"

using namespace rrt;

namespace {

SpectrumModel mode_model(double n_bar, double gamma_hz, double nu_m = 2.637e6,
                         double white = 0.03) {
    SpectrumModel m;
    m.primary = {nu_m, gamma_hz, n_bar, 1.0, 1.0};
    m.response.ref_freq_hz = nu_m;
    m.zp_ref_gamma_hz = gamma_hz;
    m.white_background = white;
    return m;
}

FitWindow full_window(const Periodogram& pg) {
    return FitWindow{pg.freqs_hz.front(), pg.freqs_hz.back(), {}};
}

Periodogram mirror_of(const Periodogram& src) {
    Periodogram out = src;
    out.window = Window::antistokes;
    const std::size_t n = src.freqs_hz.size();
    for (std::size_t i = 0; i < n; ++i) {
        out.freqs_hz[i] = -src.freqs_hz[n - 1 - i];
        out.values[i] = src.values[n - 1 - i];
    }
    return out;
}

struct FittedPair {
    Periodogram stokes, antistokes;
    FitWindow ws, wa;
    LorentzianFit fs, fa;
};

FittedPair fit_pair(const SpectrumModel& m, double span, double rbw, double n_avg,
                    std::uint64_t seed, bool noiseless = false) {
    FittedPair p;
    p.stokes = synthesize_periodogram(m, Window::stokes, span, rbw, n_avg, seed, noiseless);
    p.antistokes =
        synthesize_periodogram(m, Window::antistokes, span, rbw, n_avg, seed, noiseless);
    p.ws = full_window(p.stokes);
    p.wa = full_window(p.antistokes);
    p.fs = fit_lorentzian(p.stokes, p.ws, initial_guess(p.stokes, p.ws));
    p.fa = fit_lorentzian(p.antistokes, p.wa, initial_guess(p.antistokes, p.wa));
    return p;
}

}  // namespace

TEST_CASE("heterodyne calibration") {
    SpectrumModel m = mode_model(100.0, 1500.0);

    SUBCASE("flat response measures rho = 1 exactly on noiseless data") {
        SpectrumModel flat = m;
        flat.primary.response_weight = 0.0;  // tone on a featureless background
        auto [cs, ca] = calibration_tone_pair(flat, flat.primary.center_hz + 9e3, 5e3, 30e3,
                                              100.0, 400, 3, true);
        const ResponseRatio rho = heterodyne_calibration(cs, ca, flat.primary.center_hz + 9e3);
        CHECK(rho.rho == doctest::Approx(1.0).epsilon(1e-12));
        // with the asymmetric mode tail under the tone the residual is ~1e-6
        auto [ms, ma] =
            calibration_tone_pair(m, m.primary.center_hz + 9e3, 5e3, 30e3, 100.0, 400, 3, true);
        const ResponseRatio rho_m = heterodyne_calibration(ms, ma, m.primary.center_hz + 9e3);
        CHECK(rho_m.rho == doctest::Approx(1.0).epsilon(1e-4));
    }

    SUBCASE("2% tilt is recovered within the tone-SNR sigma") {
        SpectrumModel tilted = m;
        tilted.response.coeff = {1.0, 0.01, 0.0};
        const double ft = tilted.primary.center_hz + 9e3;
        const double truth = tilted.response.eval(-ft) / tilted.response.eval(ft);
        int within3 = 0;
        double worst = 0;
        for (std::uint64_t seed = 0; seed < 60; ++seed) {
            auto [cs, ca] = calibration_tone_pair(tilted, ft, 5e3, 30e3, 100.0, 400, seed);
            const ResponseRatio rho = heterodyne_calibration(cs, ca, ft);
            CHECK(rho.sigma > 0);
            if (std::abs(rho.rho - truth) <= 3.0 * rho.sigma) ++within3;
            worst = std::max(worst, std::abs(rho.rho - truth) / truth);
        }
        CHECK(within3 >= 57);
        CHECK(worst < 0.01);
    }

    SUBCASE("missing tone is reported") {
        const Periodogram s =
            synthesize_periodogram(m, Window::calibration_stokes, 30e3, 100.0, 400, 5);
        const Periodogram a =
            synthesize_periodogram(m, Window::calibration_antistokes, 30e3, 100.0, 400, 5);
        CHECK_THROWS_AS(heterodyne_calibration(s, a, m.primary.center_hz + 9e3), MissingTone);
    }
}

TEST_CASE("peak ratio with joint refit") {
    SUBCASE("mirrored data give R = 1 exactly") {
        SpectrumModel m = mode_model(30.0, 4000.0);
        const Periodogram st = synthesize_periodogram(m, Window::stokes, 40e3, 100.0, 400, 11);
        const Periodogram at = mirror_of(st);
        const FitWindow ws = full_window(st), wa = full_window(at);
        const LorentzianFit fs = fit_lorentzian(st, ws, initial_guess(st, ws));
        const LorentzianFit fa = fit_lorentzian(at, wa, initial_guess(at, wa));
        const RatioEstimate est =
            ratio_from_peak_fits(st, ws, fs, at, wa, fa, ResponseRatio{1.0, 0.0});
        CHECK(est.r_sa == doctest::Approx(1.0).epsilon(1e-8));
    }

    SUBCASE("n = 2 model converges to R = 1.5 at high averaging") {
        SpectrumModel m = mode_model(2.0, 8000.0);
        const FittedPair p = fit_pair(m, 60e3, 100.0, 1e5, 21);
        const RatioEstimate est = ratio_from_peak_fits(p.stokes, p.ws, p.fs, p.antistokes,
                                                       p.wa, p.fa, ResponseRatio{1.0, 0.0});
        CHECK(std::abs(est.r_sa - 1.5) <= 3.0 * est.r_sigma);
        CHECK(est.r_sigma < 0.01);
    }

    SUBCASE("ratio sigma shrinks as 1/sqrt(n_avg)") {
        SpectrumModel m = mode_model(5.0, 5000.0);
        auto ensemble_sd = [&](double n_avg) {
            std::vector<double> rs;
            for (std::uint64_t seed = 100; seed < 160; ++seed) {
                const FittedPair p = fit_pair(m, 50e3, 100.0, n_avg, seed);
                rs.push_back(ratio_from_peak_fits(p.stokes, p.ws, p.fs, p.antistokes, p.wa,
                                                  p.fa, ResponseRatio{1.0, 0.0})
                                 .r_sa);
            }
            double mean = 0;
            for (double r : rs) mean += r;
            mean /= rs.size();
            double var = 0;
            for (double r : rs) var += (r - mean) * (r - mean);
            return std::sqrt(var / (rs.size() - 1));
        };
        const double sd400 = ensemble_sd(400.0);
        const double sd6400 = ensemble_sd(6400.0);
        CHECK(sd400 / sd6400 == doctest::Approx(4.0).epsilon(0.45));
    }

    SUBCASE("requires converged seeds") {
        SpectrumModel m = mode_model(5.0, 5000.0);
        const FittedPair p = fit_pair(m, 50e3, 100.0, 400, 1);
        LorentzianFit bad = p.fs;
        bad.converged = false;
        CHECK_THROWS_AS(ratio_from_peak_fits(p.stokes, p.ws, bad, p.antistokes, p.wa, p.fa,
                                             ResponseRatio{1.0, 0.0}),
                        ConfigError);
    }
}

TEST_CASE("band ratio on a noiseless n = 2.1 model") {
    SpectrumModel m = mode_model(2.1, 14518.0, 1.509e6, 0.05);
    const Periodogram st = synthesize_periodogram(m, Window::stokes, 80e3, 100.0, 400, 0, true);
    const Periodogram at =
        synthesize_periodogram(m, Window::antistokes, 80e3, 100.0, 400, 0, true);
    // exact backgrounds: quiet regions on the clean upper side
    const BackgroundEstimate bs =
        estimate_background(st, {{-1.509e6 - 38e3, -1.509e6 - 28e3}});
    const BackgroundEstimate ba = estimate_background(at, {{1.509e6 + 28e3, 1.509e6 + 38e3}});
    const RatioEstimate est =
        ratio_from_bands(st, at, 1.509e6, 2000.0, bs, ba, ResponseRatio{1.0, 0.0});
    CHECK(est.r_sa == doctest::Approx(sideband_ratio(2.1)).epsilon(1e-3));
}

TEST_CASE("occupation and effective temperature") {
    SUBCASE("propagation arithmetic") {
        const ThermometryResult r = occupation_and_teff(1.476, 0.03, 1.509e6);
        CHECK(r.n_bar_valid);
        CHECK(r.n_bar == doctest::Approx(1.0 / 0.476).epsilon(1e-12));
        CHECK(r.n_bar_sigma == doctest::Approx(0.03 / (0.476 * 0.476)).epsilon(1e-12));
        CHECK(r.n_bar == doctest::Approx(2.1).epsilon(1e-3));
        CHECK(r.n_bar_sigma == doctest::Approx(0.13).epsilon(0.02));
        CHECK(r.t_eff_kelvin ==
              doctest::Approx(temperature_from_occupation(r.n_bar, 1.509e6)).epsilon(1e-12));
        CHECK_FALSE(r.unbounded_consistent);
        CHECK(r.systematics.size() >= 4);
    }

    SUBCASE("error-dominated ratio is flagged") {
        const ThermometryResult r = occupation_and_teff(1.0005, 0.001, 1.509e6);
        CHECK(r.n_bar_valid);
        CHECK(r.unbounded_consistent);
    }

    SUBCASE("ratio below one carries no finite estimate") {
        const ThermometryResult r = occupation_and_teff(0.99, 0.01, 1.509e6);
        CHECK_FALSE(r.n_bar_valid);
        CHECK(r.unbounded_consistent);
        CHECK(r.stat_sigma > 0);
    }

    SUBCASE("t_eff sigma follows dT/dn") {
        const ThermometryResult r = occupation_and_teff(1.4, 0.01, 2.637e6);
        const double dn = 1e-6 * r.n_bar;
        const double dT = temperature_from_occupation(r.n_bar + dn, 2.637e6) -
                          temperature_from_occupation(r.n_bar, 2.637e6);
        CHECK(r.t_eff_sigma == doctest::Approx(dT / dn * r.n_bar_sigma).epsilon(1e-4));
    }
}

TEST_CASE("weighted linear fit") {
    SUBCASE("exact line") {
        const std::vector<double> x = {1, 2, 3, 5, 8};
        std::vector<double> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = 2.0 * x[i] + 1.0;
        const std::vector<double> s(x.size(), 1e-9);
        const LinearFitResult f = weighted_linear_fit(x, y, s);
        CHECK(f.slope == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(f.intercept == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(std::sqrt(f.covariance[0]) < 1e-9);
        CHECK(std::sqrt(f.covariance[3]) < 1e-8);
    }

    SUBCASE("equal weights reproduce ordinary least squares") {
        testsupport::Rand rng(31);
        std::vector<double> x, y, s;
        for (int i = 0; i < 12; ++i) {
            x.push_back(rng.uniform(0, 10));
            y.push_back(rng.uniform(-5, 5));
            s.push_back(2.5);
        }
        const LinearFitResult f = weighted_linear_fit(x, y, s);
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double n = static_cast<double>(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            sx += x[i];
            sy += y[i];
            sxx += x[i] * x[i];
            sxy += x[i] * y[i];
        }
        const double slope_ols = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        const double icpt_ols = (sy - slope_ols * sx) / n;
        CHECK(f.slope == doctest::Approx(slope_ols).epsilon(1e-12));
        CHECK(f.intercept == doctest::Approx(icpt_ols).epsilon(1e-12));
    }

    SUBCASE("slope confidence interval covers at 68%") {
        testsupport::Rand rng(57);
        const std::vector<double> x = {0.5, 1.0, 2.0, 3.0, 4.5, 6.0};
        int covered = 0;
        const int trials = 1000;
        for (int t = 0; t < trials; ++t) {
            std::vector<double> y, s;
            for (double xi : x) {
                const double sigma = 0.3;
                y.push_back(1.0 + 0.7 * xi + sigma * rng.normal());
                s.push_back(sigma);
            }
            const LinearFitResult f = weighted_linear_fit(x, y, s);
            if (std::abs(f.slope - 0.7) <= std::sqrt(f.covariance[0])) ++covered;
        }
        CHECK(covered >= 630);
        CHECK(covered <= 730);
    }

    SUBCASE("degenerate abscissa") {
        CHECK_THROWS_AS(
            weighted_linear_fit({2, 2, 2}, {1, 2, 3}, {0.1, 0.1, 0.1}), DegenerateAbscissa);
    }
}

TEST_CASE("temperature extrapolation from ratio points") {
    const double gamma0 = 0.84;
    const double nu = 2.637e6;
    const double n_th = thermal_occupation(nu, 4.8);
    const double c_d = 6e8;

    auto exact_points = [&](double qba_hz) {
        std::vector<RatioPoint> pts;
        for (double p : {3.2e-6, 7e-6, 14e-6, 21e-6, 28e-6}) {
            const double gamma = gamma0 + c_d * p;
            const double n = (n_th * gamma0 + qba_hz) / gamma;
            pts.push_back({p, sideband_ratio(n), 1e-6, gamma, 1e-3});
        }
        return pts;
    };

    SUBCASE("exact synthetic model is recovered to 1e-6") {
        const ThermometryResult r = extrapolate_t0(exact_points(0.0), gamma0, nu);
        CHECK(r.method == Method::extrapolation);
        CHECK(r.n_bar == doctest::Approx(n_th).epsilon(1e-6));
        CHECK(r.t0_kelvin == doctest::Approx(4.8).epsilon(1e-6));
        // the fitted intercept is 1 + 1/n_th: the tiny undamped asymmetry
        const auto* sys = const_cast<ThermometryResult&>(r).find_systematic("heterodyne_residual");
        REQUIRE(sys != nullptr);
        CHECK(sys->value == doctest::Approx(1.0 / n_th).epsilon(1e-6));
    }

    SUBCASE("backaction shifts the raw extrapolation by exactly Gamma_qba/Gamma_0") {
        const double qba = 1327.0;
        ThermometryResult r = extrapolate_t0(exact_points(qba), gamma0, nu);
        CHECK(r.n_bar == doctest::Approx(n_th + qba / gamma0).epsilon(1e-6));
        backaction_correction(r, 26e-6, qba / 26e-6, gamma0, nu);
        CHECK(r.n_bar == doctest::Approx(n_th).epsilon(1e-6));
        CHECK(r.t0_kelvin == doctest::Approx(4.8).epsilon(1e-6));
    }

    SUBCASE("residual heterodyne miscalibration lands in the systematics") {
        auto pts = exact_points(0.0);
        for (auto& p : pts) p.r_sa += 0.01;  // uncorrected offset
        const ThermometryResult r = extrapolate_t0(pts, gamma0, nu);
        auto* sys = const_cast<ThermometryResult&>(r).find_systematic("heterodyne_residual");
        REQUIRE(sys != nullptr);
        CHECK(sys->value == doctest::Approx(0.01 + 1.0 / n_th).epsilon(1e-6));
    }

    SUBCASE("cross-check route agrees on exact data") {
        const ThermometryResult r = extrapolate_t0(exact_points(0.0), gamma0, nu);
        auto* sys =
            const_cast<ThermometryResult&>(r).find_systematic("crosscheck_r_vs_gamma_frac");
        REQUIRE(sys != nullptr);
        CHECK(std::abs(sys->value) < 1e-6);
    }

    SUBCASE("span and slope guards") {
        auto pts = exact_points(0.0);
        pts.resize(2);
        CHECK_THROWS_AS(extrapolate_t0(pts, gamma0, nu), InsufficientSpan);

        std::vector<RatioPoint> narrow = {{10e-6, 1.1, 1e-3, 5e3, 1.0},
                                          {11e-6, 1.11, 1e-3, 5.1e3, 1.0},
                                          {12e-6, 1.12, 1e-3, 5.2e3, 1.0}};
        CHECK_THROWS_AS(extrapolate_t0(narrow, gamma0, nu), InsufficientSpan);

        auto flipped = exact_points(0.0);
        for (auto& p : flipped) p.r_sa = 3.0 - p.r_sa;
        CHECK_THROWS_AS(extrapolate_t0(flipped, gamma0, nu), NegativeSlope);
    }

    SUBCASE("points below R = 1 stay in the fit") {
        auto pts = exact_points(0.0);
        pts[0].r_sa = 0.99995;  // weak-damping fluctuation below one
        const ThermometryResult r = extrapolate_t0(pts, gamma0, nu);
        CHECK(r.n_bar_valid);
        CHECK(r.t0_kelvin > 0);
    }
}

TEST_CASE("backaction correction bookkeeping") {
    const double nu = 2.637e6;
    const double gamma0 = 0.84;
    const PhysConsts pc;
    // constant calibrated so the reference correction is 0.2 K
    const double delta_n_ref = pc.kb * 0.2 / (pc.h() * nu);
    const double qba_rate = delta_n_ref * gamma0 / 26e-6;

    ThermometryResult r;
    r.method = Method::extrapolation;
    r.n_bar_valid = true;
    r.n_bar = thermal_occupation(nu, 4.8) + delta_n_ref;
    r.n_bar_sigma = 100.0;
    r.t0_kelvin = temperature_from_occupation(r.n_bar, nu);
    r.systematics = default_systematics();

    SUBCASE("reference point applies 0.2 K") {
        backaction_correction(r, 26e-6, qba_rate, gamma0, nu);
        auto* sys = r.find_systematic("backaction_correction_kelvin");
        REQUIRE(sys != nullptr);
        CHECK(sys->value == doctest::Approx(0.2).epsilon(1e-3));
        CHECK(r.t0_kelvin == doctest::Approx(4.8).epsilon(1e-4));
    }

    SUBCASE("correction vanishes with probe power and scales linearly") {
        ThermometryResult r0 = r;
        backaction_correction(r0, 0.0, qba_rate, gamma0, nu);
        CHECK(r0.find_systematic("backaction_correction_kelvin")->value == 0.0);

        ThermometryResult rh = r;
        backaction_correction(rh, 13e-6, qba_rate, gamma0, nu);
        CHECK(rh.find_systematic("backaction_correction_kelvin")->value ==
              doctest::Approx(0.1).epsilon(2e-3));
    }
}

TEST_CASE("classical noise bound") {
    CHECK(classical_noise_bound(0.0, 0.0, 1.4) == 0.0);
    CHECK(classical_noise_bound(0.02, 0.02, 1.4) == 0.0);
    const double b = classical_noise_bound(0.01, 0.0, 1.5);
    CHECK(b > 0);
    CHECK(classical_noise_bound(0.02, 0.0, 1.5) == doctest::Approx(2.0 * b).epsilon(1e-12));
    // tighter ratios amplify the bound
    CHECK(classical_noise_bound(0.01, 0.0, 1.05) > b);
}
