#include "rrt/thermometry.hpp"

#include <algorithm>
#include <cmath>

#include "rrt/errors.hpp"

namespace rrt {

std::string method_name(Method m) {
    switch (m) {
        case Method::peak_ratio: return "peak_ratio";
        case Method::band_ratio: return "band_ratio";
        default: return "extrapolation";
    }
}

SystematicEntry* ThermometryResult::find_systematic(const std::string& name) {
    for (auto& s : systematics)
        if (s.name == name) return &s;
    return nullptr;
}

std::vector<SystematicEntry> default_systematics() {
    return {{"heterodyne_residual", 0.0, "fitted R-vs-P intercept minus 1"},
            {"backaction_correction_kelvin", 0.0, "shot-noise backaction removed from T0"},
            {"band_sensitivity_frac", 0.0, "inferred-T spread over band-center sweep"},
            {"classical_noise_bound_frac", 0.0, "bound from sideband bias betas"}};
}

namespace {

struct TonePower {
    double power = 0;
    double sigma = 0;
};

TonePower tone_power(const Periodogram& pg, double tone_freq, const char* side) {
    std::size_t bin = 0;
    double best = std::abs(pg.freqs_hz[0] - tone_freq);
    for (std::size_t i = 1; i < pg.freqs_hz.size(); ++i) {
        const double d = std::abs(pg.freqs_hz[i] - tone_freq);
        if (d < best) {
            best = d;
            bin = i;
        }
    }
    // local background from neighbors, skipping the tone bin and its wings
    double sum = 0;
    std::size_t count = 0;
    const long b = static_cast<long>(bin);
    const long n = static_cast<long>(pg.values.size());
    for (long off = -12; off <= 12; ++off) {
        if (std::abs(off) < 3) continue;
        const long i = b + off;
        if (i < 0 || i >= n) continue;
        sum += pg.values[static_cast<std::size_t>(i)];
        ++count;
    }
    if (count == 0) throw MissingTone(side);
    const double bg = sum / static_cast<double>(count);
    const double bg_noise = bg / std::sqrt(pg.n_avg);
    const double excess = pg.values[bin] - bg;
    if (excess < 5.0 * bg_noise) throw MissingTone(side);

    TonePower t;
    t.power = excess * pg.rbw_hz;
    t.sigma = std::sqrt(bg_noise * bg_noise * (1.0 + 1.0 / static_cast<double>(count))) *
              pg.rbw_hz;
    return t;
}

}  // namespace

ResponseRatio heterodyne_calibration(const Periodogram& cal_stokes,
                                     const Periodogram& cal_antistokes,
                                     double tone_freq_hz) {
    const TonePower ps = tone_power(cal_stokes, -std::abs(tone_freq_hz), "stokes");
    const TonePower pa = tone_power(cal_antistokes, std::abs(tone_freq_hz), "antistokes");
    ResponseRatio r;
    r.rho = ps.power / pa.power;
    const double rel2 = (ps.sigma / ps.power) * (ps.sigma / ps.power) +
                        (pa.sigma / pa.power) * (pa.sigma / pa.power);
    r.sigma = r.rho * std::sqrt(rel2);
    return r;
}

RatioEstimate ratio_from_peak_fits(const Periodogram& stokes, const FitWindow& stokes_window,
                                   const LorentzianFit& stokes_fit,
                                   const Periodogram& antistokes,
                                   const FitWindow& antistokes_window,
                                   const LorentzianFit& antistokes_fit,
                                   const ResponseRatio& rho, const FitOptions& opts) {
    if (!stokes_fit.converged || !antistokes_fit.converged)
        throw ConfigError("ratio_from_peak_fits requires converged seed fits");

    RatioEstimate est;
    est.joint = fit_sideband_pair(stokes, stokes_window, stokes_fit, antistokes,
                                  antistokes_window, antistokes_fit, opts);

    const double as = est.joint.amp_stokes;
    const double aa = est.joint.amp_antistokes;
    const double r_raw = as / aa;
    est.r_sa = r_raw / rho.rho;

    const double var_s = est.joint.covariance[0 * 6 + 0];
    const double var_a = est.joint.covariance[1 * 6 + 1];
    const double cov_sa = est.joint.covariance[0 * 6 + 1];
    double var_raw = r_raw * r_raw *
                     (var_s / (as * as) + var_a / (aa * aa) - 2.0 * cov_sa / (as * aa));
    var_raw = std::max(var_raw, 0.0);
    const double rel2 = var_raw / (r_raw * r_raw) +
                        (rho.sigma / rho.rho) * (rho.sigma / rho.rho);
    est.r_sigma = est.r_sa * std::sqrt(rel2);
    return est;
}

RatioEstimate ratio_from_bands(const Periodogram& stokes, const Periodogram& antistokes,
                               double center_mag_hz, double half_width_hz,
                               const BackgroundEstimate& stokes_background,
                               const BackgroundEstimate& antistokes_background,
                               const ResponseRatio& rho) {
    const BandIntegral is = integrate_band(stokes, -center_mag_hz, half_width_hz,
                                           stokes_background.level, stokes_background.sigma);
    const BandIntegral ia = integrate_band(antistokes, center_mag_hz, half_width_hz,
                                           antistokes_background.level,
                                           antistokes_background.sigma);
    RatioEstimate est;
    const double r_raw = is.area / ia.area;
    est.r_sa = r_raw / rho.rho;
    const double rel2 = (is.sigma / is.area) * (is.sigma / is.area) +
                        (ia.sigma / ia.area) * (ia.sigma / ia.area) +
                        (rho.sigma / rho.rho) * (rho.sigma / rho.rho);
    est.r_sigma = std::abs(est.r_sa) * std::sqrt(rel2);
    return est;
}

ThermometryResult occupation_and_teff(double r_sa, double r_sigma, double freq_hz,
                                      Method method, const PhysConsts& c) {
    ThermometryResult res;
    res.method = method;
    res.r_sa = r_sa;
    res.r_sigma = r_sigma;
    res.systematics = default_systematics();
    res.stat_sigma = r_sigma;

    if (!(r_sa > 1.0)) {
        res.n_bar_valid = false;
        res.unbounded_consistent = true;
        return res;
    }
    res.n_bar_valid = true;
    res.n_bar = 1.0 / (r_sa - 1.0);
    res.n_bar_sigma = r_sigma / ((r_sa - 1.0) * (r_sa - 1.0));
    res.unbounded_consistent = (r_sa - 1.0) <= r_sigma;

    res.t_eff_kelvin = temperature_from_occupation(res.n_bar, freq_hz, c);
    const double K = c.h() * freq_hz / c.kb;
    const double dT_dn =
        res.t_eff_kelvin * res.t_eff_kelvin / (K * res.n_bar * (res.n_bar + 1.0));
    res.t_eff_sigma = dT_dn * res.n_bar_sigma;
    res.stat_sigma = res.n_bar_sigma;
    return res;
}

LinearFitResult weighted_linear_fit(const std::vector<double>& x, const std::vector<double>& y,
                                    const std::vector<double>& sigma_y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n || sigma_y.size() != n)
        throw ConfigError("weighted_linear_fit needs >= 2 points with matching sigmas");

    double sw = 0, swx = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(sigma_y[i] > 0)) throw ConfigError("weighted_linear_fit: sigma_y must be > 0");
        const double w = 1.0 / (sigma_y[i] * sigma_y[i]);
        sw += w;
        swx += w * x[i];
    }
    const double xbar = swx / sw;

    double sxx = 0, sxy = 0, sy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = 1.0 / (sigma_y[i] * sigma_y[i]);
        const double dx = x[i] - xbar;
        sxx += w * dx * dx;
        sxy += w * dx * y[i];
        sy += w * y[i];
    }
    double xscale = 0;
    for (std::size_t i = 0; i < n; ++i) xscale = std::max(xscale, std::abs(x[i] - xbar));
    if (!(sxx > 0) || xscale == 0) throw DegenerateAbscissa();

    LinearFitResult r;
    r.slope = sxy / sxx;
    const double mean_y = sy / sw;
    r.intercept = mean_y - r.slope * xbar;
    r.covariance[0] = 1.0 / sxx;                        // var slope
    r.covariance[3] = 1.0 / sw + xbar * xbar / sxx;     // var intercept
    r.covariance[1] = r.covariance[2] = -xbar / sxx;
    for (std::size_t i = 0; i < n; ++i) {
        const double res = y[i] - (r.intercept + r.slope * x[i]);
        r.chi2 += res * res / (sigma_y[i] * sigma_y[i]);
    }
    return r;
}

ThermometryResult extrapolate_t0(const std::vector<RatioPoint>& points, double gamma0_hz,
                                 double freq_hz, const PhysConsts& c) {
    if (points.size() < 3)
        throw InsufficientSpan("need >= 3 damping powers, have " +
                               std::to_string(points.size()));
    double pmin = points.front().p_damp_watts, pmax = pmin;
    for (const auto& pt : points) {
        pmin = std::min(pmin, pt.p_damp_watts);
        pmax = std::max(pmax, pt.p_damp_watts);
    }
    if (!(pmax > 0) || (pmin > 0 && pmax / pmin < 3.0))
        throw InsufficientSpan("damping powers must span at least a factor of 3");
    if (!(gamma0_hz > 0)) throw ConfigError("extrapolate_t0: gamma0_hz must be > 0");

    std::vector<double> p, r, sr, g, sg;
    for (const auto& pt : points) {
        p.push_back(pt.p_damp_watts);
        r.push_back(pt.r_sa);
        sr.push_back(pt.r_sigma);
        g.push_back(pt.gamma_m_hz);
        sg.push_back(pt.gamma_sigma);
    }
    const LinearFitResult fit_r = weighted_linear_fit(p, r, sr);
    const LinearFitResult fit_g = weighted_linear_fit(p, g, sg);
    if (!(fit_r.slope > 0)) throw NegativeSlope("dR/dP <= 0 signals miscalibration");
    if (!(fit_g.slope > 0)) throw NegativeSlope("dGamma/dP <= 0 signals miscalibration");

    ThermometryResult res;
    res.method = Method::extrapolation;
    res.systematics = default_systematics();
    res.n_bar_valid = true;
    res.n_bar = fit_g.slope / (fit_r.slope * gamma0_hz);
    const double rel2 = fit_r.covariance[0] / (fit_r.slope * fit_r.slope) +
                        fit_g.covariance[0] / (fit_g.slope * fit_g.slope);
    res.n_bar_sigma = res.n_bar * std::sqrt(rel2);

    res.t0_kelvin = temperature_from_occupation(res.n_bar, freq_hz, c);
    const double K = c.h() * freq_hz / c.kb;
    const double dT_dn = res.t0_kelvin * res.t0_kelvin / (K * res.n_bar * (res.n_bar + 1.0));
    res.stat_sigma = dT_dn * res.n_bar_sigma;

    if (auto* s = res.find_systematic("heterodyne_residual")) {
        s->value = fit_r.intercept - 1.0;
        s->note = "fitted R-vs-P intercept minus 1, sigma " +
                  std::to_string(std::sqrt(fit_r.covariance[3]));
    }

    // cross-check: direct R vs Gamma_m fit, quoted as a fractional deviation
    const LinearFitResult fit_rg = weighted_linear_fit(g, r, sr);
    if (fit_rg.slope > 0) {
        const double n_cross = 1.0 / (fit_rg.slope * gamma0_hz);
        res.systematics.push_back(
            {"crosscheck_r_vs_gamma_frac", (n_cross - res.n_bar) / res.n_bar,
             "direct R-vs-Gamma slope route relative to the slope-ratio route"});
    }
    return res;
}

void backaction_correction(ThermometryResult& result, double p_probe_watts,
                           double qba_rate_hz_per_watt, double gamma0_hz, double freq_hz,
                           const PhysConsts& c) {
    const double delta_n = qba_rate_hz_per_watt * p_probe_watts / gamma0_hz;
    double correction = 0.0;
    if (delta_n > 0 && result.n_bar_valid && result.n_bar - delta_n > 0) {
        const double t_raw = temperature_from_occupation(result.n_bar, freq_hz, c);
        result.n_bar -= delta_n;
        const double t_corr = temperature_from_occupation(result.n_bar, freq_hz, c);
        correction = t_raw - t_corr;
        result.t0_kelvin = t_corr;
        const double K = c.h() * freq_hz / c.kb;
        const double dT_dn = t_corr * t_corr / (K * result.n_bar * (result.n_bar + 1.0));
        result.stat_sigma = dT_dn * result.n_bar_sigma;
    }
    if (auto* s = result.find_systematic("backaction_correction_kelvin")) {
        s->value = correction;
        s->note = "delta_n = " + std::to_string(delta_n) + " removed at P_p = " +
                  std::to_string(p_probe_watts * 1e6) + " uW";
    }
}

double classical_noise_bound(double beta_stokes, double beta_antistokes, double r_sa) {
    if (!(r_sa > 1.0)) return 0.0;
    const double dbeta = std::abs(beta_stokes - beta_antistokes);
    const double n = 1.0 / (r_sa - 1.0);
    const double dlnT_dlnn = 1.0 / ((n + 1.0) * std::log1p(1.0 / n));
    return dbeta * r_sa / (r_sa - 1.0) * dlnT_dlnn;
}

}  // namespace rrt
