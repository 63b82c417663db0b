#include "rrt/fit.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "rrt/errors.hpp"

namespace rrt {

bool FitWindow::contains(double f) const {
    if (f < lo_hz || f > hi_hz) return false;
    for (const auto& [lo, hi] : exclusions)
        if (f >= lo && f <= hi) return false;
    return true;
}

void FitWindow::validate() const {
    if (!(lo_hz < hi_hz)) throw ConfigError("fit window: lo_hz must be < hi_hz");
    for (const auto& [lo, hi] : exclusions) {
        if (!(lo < hi)) throw ConfigError("fit window: exclusion lo must be < hi");
        if (hi < lo_hz || lo > hi_hz)
            throw ConfigError("fit window: exclusion lies outside the window");
    }
}

double LorentzianFit::sigma(int i) const { return std::sqrt(covariance[i * 4 + i]); }
double SidebandPairFit::sigma(int i) const { return std::sqrt(covariance[i * 6 + i]); }

namespace {

struct WindowData {
    std::vector<double> freq;
    std::vector<double> value;
};

WindowData collect(const Periodogram& pg, const FitWindow& w) {
    w.validate();
    WindowData d;
    for (std::size_t i = 0; i < pg.freqs_hz.size(); ++i) {
        if (w.contains(pg.freqs_hz[i])) {
            d.freq.push_back(pg.freqs_hz[i]);
            d.value.push_back(pg.values[i]);
        }
    }
    return d;
}

double median_of(std::vector<double> v) {
    const std::size_t n = v.size();
    std::nth_element(v.begin(), v.begin() + n / 2, v.end());
    double m = v[n / 2];
    if (n % 2 == 0) {
        std::nth_element(v.begin(), v.begin() + n / 2 - 1, v.end());
        m = 0.5 * (m + v[n / 2 - 1]);
    }
    return m;
}

std::vector<double> boxcar5(const std::vector<double>& v) {
    const long n = static_cast<long>(v.size());
    std::vector<double> out(v.size());
    for (long i = 0; i < n; ++i) {
        const long lo = std::max(0l, i - 2);
        const long hi = std::min(n - 1, i + 2);
        double s = 0;
        for (long j = lo; j <= hi; ++j) s += v[j];
        out[i] = s / static_cast<double>(hi - lo + 1);
    }
    return out;
}

}  // namespace

namespace detail {

void invert_symmetric(std::vector<double>& m, std::size_t n) {
    // Gauss-Jordan with partial pivoting on [m | I].
    std::vector<double> a(n * 2 * n, 0.0);
    double scale = 0;
    for (std::size_t i = 0; i < n * n; ++i) scale = std::max(scale, std::abs(m[i]));
    if (scale == 0) throw SingularNormalMatrix();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) a[r * 2 * n + c] = m[r * n + c];
        a[r * 2 * n + n + r] = 1.0;
    }
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r * 2 * n + col]) > std::abs(a[piv * 2 * n + col])) piv = r;
        if (std::abs(a[piv * 2 * n + col]) < 1e-14 * scale) throw SingularNormalMatrix();
        if (piv != col)
            for (std::size_t c = 0; c < 2 * n; ++c) std::swap(a[piv * 2 * n + c], a[col * 2 * n + c]);
        const double d = a[col * 2 * n + col];
        for (std::size_t c = 0; c < 2 * n; ++c) a[col * 2 * n + c] /= d;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[r * 2 * n + col];
            if (f == 0) continue;
            for (std::size_t c = 0; c < 2 * n; ++c) a[r * 2 * n + c] -= f * a[col * 2 * n + c];
        }
    }
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) m[r * n + c] = a[r * 2 * n + n + c];
    // symmetrize against round-off
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = r + 1; c < n; ++c) {
            const double s = 0.5 * (m[r * n + c] + m[c * n + r]);
            m[r * n + c] = s;
            m[c * n + r] = s;
        }
}

}  // namespace detail

namespace {

// Shared damped Gauss-Newton engine with model-based iterated weights.
// `eval` fills model values and the row-major Jacobian for the current
// parameter vector. `positive` lists parameters that must stay > 0.
struct GnOutcome {
    std::vector<double> p;
    std::vector<double> cov;
    double chi2 = 0;
    bool converged = false;
    int iterations = 0;
};

GnOutcome gauss_newton(
    const std::vector<double>& y, double n_avg,
    const std::function<void(const std::vector<double>&, std::vector<double>&,
                             std::vector<double>&)>& eval,
    std::vector<double> p, const std::vector<int>& positive,
    const std::vector<double>& param_scale, const FitOptions& opts) {
    const std::size_t n = y.size();
    const std::size_t k = p.size();
    if (n < 5 * k)
        throw InsufficientBins("need at least " + std::to_string(5 * k) + " bins, have " +
                               std::to_string(n));

    double ymax = 0;
    for (double v : y) ymax = std::max(ymax, std::abs(v));
    const double model_floor = std::max(1e-9 * ymax, 1e-300);

    std::vector<double> model(n), jac(n * k), weight(n), delta(k), rhs(k);
    std::vector<double> normal(k * k);
    std::vector<double> trial(k), trial_model(n), trial_jac(n * k);

    auto chi2_of = [&](const std::vector<double>& m, const std::vector<double>& w) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - m[i];
            s += w[i] * r * r;
        }
        return s;
    };

    eval(p, model, jac);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = std::max(std::abs(model[i]), model_floor) / std::sqrt(n_avg);
        weight[i] = 1.0 / (s * s);
    }
    double chi2 = chi2_of(model, weight);

    GnOutcome out;
    for (int iter = 1; iter <= opts.max_iters; ++iter) {
        out.iterations = iter;

        // normal equations J^T W J delta = J^T W r
        std::fill(normal.begin(), normal.end(), 0.0);
        std::fill(rhs.begin(), rhs.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - model[i];
            const double w = weight[i];
            for (std::size_t a = 0; a < k; ++a) {
                const double ja = jac[i * k + a];
                rhs[a] += w * ja * r;
                for (std::size_t b = a; b < k; ++b) normal[a * k + b] += w * ja * jac[i * k + b];
            }
        }
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < a; ++b) normal[a * k + b] = normal[b * k + a];

        // column equilibration keeps Hz-scale and unit-scale parameters from
        // wrecking the conditioning
        std::vector<double> d(k);
        for (std::size_t a = 0; a < k; ++a)
            d[a] = normal[a * k + a] > 0 ? 1.0 / std::sqrt(normal[a * k + a]) : 1.0;
        std::vector<double> ns(k * k);
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) ns[a * k + b] = normal[a * k + b] * d[a] * d[b];
        detail::invert_symmetric(ns, k);
        for (std::size_t a = 0; a < k; ++a) {
            delta[a] = 0;
            for (std::size_t b = 0; b < k; ++b) delta[a] += d[a] * ns[a * k + b] * d[b] * rhs[b];
        }

        // step halving against chi^2 increase (weights frozen) and against
        // leaving the positive domain
        double lambda = 1.0;
        double new_chi2 = 0;
        bool accepted = false;
        for (int half = 0; half < 40; ++half) {
            bool ok = true;
            for (std::size_t a = 0; a < k; ++a) {
                trial[a] = p[a] + lambda * delta[a];
            }
            for (int idx : positive)
                if (!(trial[static_cast<std::size_t>(idx)] > 0)) ok = false;
            if (ok) {
                eval(trial, trial_model, trial_jac);
                new_chi2 = chi2_of(trial_model, weight);
                if (new_chi2 <= chi2 * (1.0 + 1e-12) || new_chi2 < 1e-280) {
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if (!accepted) {
            // cannot decrease chi^2 along the Gauss-Newton direction: we are
            // at (numerical) convergence or stuck; treat a tiny residual step
            // as converged
            out.converged = true;
            break;
        }

        bool step_small = true;
        for (std::size_t a = 0; a < k; ++a) {
            const double ref = std::max(std::abs(p[a]), param_scale[a]);
            if (std::abs(lambda * delta[a]) > opts.step_tol * ref) step_small = false;
        }

        p = trial;
        model = trial_model;
        jac = trial_jac;
        for (std::size_t i = 0; i < n; ++i) {
            const double s = std::max(std::abs(model[i]), model_floor) / std::sqrt(n_avg);
            weight[i] = 1.0 / (s * s);
        }
        const double chi2_new_w = chi2_of(model, weight);
        const double rel_change =
            std::abs(chi2_new_w - chi2) / std::max({chi2, chi2_new_w, 1e-300});
        chi2 = chi2_new_w;

        if (step_small || rel_change < opts.chi2_tol) {
            out.converged = true;
            break;
        }
    }
    if (!out.converged) throw NoConvergence(opts.max_iters);

    // covariance from the final weighted normal matrix
    std::fill(normal.begin(), normal.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double w = weight[i];
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = a; b < k; ++b)
                normal[a * k + b] += w * jac[i * k + a] * jac[i * k + b];
    }
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < a; ++b) normal[a * k + b] = normal[b * k + a];
    std::vector<double> d(k);
    for (std::size_t a = 0; a < k; ++a)
        d[a] = normal[a * k + a] > 0 ? 1.0 / std::sqrt(normal[a * k + a]) : 1.0;
    std::vector<double> ns(k * k);
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) ns[a * k + b] = normal[a * k + b] * d[a] * d[b];
    detail::invert_symmetric(ns, k);
    out.cov.assign(k * k, 0.0);
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) out.cov[a * k + b] = ns[a * k + b] * d[a] * d[b];

    out.p = std::move(p);
    out.chi2 = chi2;
    return out;
}

}  // namespace

namespace detail {

namespace {

// Lorentzian value and partial derivatives shared by both fitters.
inline void lorentz_terms(double f, double center, double gamma, double& u, double& du_dd,
                          double& du_dgamma) {
    const double hw = 0.5 * gamma;
    const double d = f - center;
    const double D = hw * hw + d * d;
    u = hw * hw / D;
    du_dd = -2.0 * u * d / D;
    du_dgamma = u * d * d / (hw * D);
}

}  // namespace

void lorentzian_model(double freq_hz, const std::array<double, 4>& p, double& value,
                      std::array<double, 4>& grad) {
    double u, du_dd, du_dg;
    lorentz_terms(freq_hz, p[1], p[2], u, du_dd, du_dg);
    value = p[3] + p[0] * u;
    grad[0] = u;
    grad[1] = -p[0] * du_dd;  // d(f - c)/dc = -1
    grad[2] = p[0] * du_dg;
    grad[3] = 1.0;
}

void sideband_pair_model(double freq_hz, bool stokes_side, const std::array<double, 6>& p,
                         double& value, std::array<double, 6>& grad) {
    const double cm = p[2], g = p[3];
    double u, du_dd, du_dg;
    if (stokes_side) {
        lorentz_terms(freq_hz, -cm, g, u, du_dd, du_dg);
        value = p[4] + p[0] * u;
        grad = {u, 0.0, p[0] * du_dd, p[0] * du_dg, 1.0, 0.0};  // d(f + cm)/dcm = +1
    } else {
        lorentz_terms(freq_hz, cm, g, u, du_dd, du_dg);
        value = p[5] + p[1] * u;
        grad = {0.0, u, -p[1] * du_dd, p[1] * du_dg, 0.0, 1.0};  // d(f - cm)/dcm = -1
    }
}

}  // namespace detail

std::array<double, 4> initial_guess(const Periodogram& pg, const FitWindow& window) {
    const WindowData d = collect(pg, window);
    if (d.value.size() < 20)
        throw InsufficientBins("initial_guess: " + std::to_string(d.value.size()) +
                               " bins in window, need >= 20");

    const double background = median_of(d.value);
    std::vector<double> dev(d.value.size());
    for (std::size_t i = 0; i < d.value.size(); ++i) dev[i] = std::abs(d.value[i] - background);
    const double scatter = 1.4826 * median_of(dev);

    const std::vector<double> smooth = boxcar5(d.value);
    std::size_t peak = 0;
    for (std::size_t i = 1; i < smooth.size(); ++i)
        if (smooth[i] > smooth[peak]) peak = i;  // ties keep the lowest frequency

    const double amplitude = smooth[peak] - background;
    if (amplitude < 3.0 * scatter) throw FlatSpectrum();

    const double half_level = background + 0.5 * amplitude;
    std::size_t left = peak, right = peak;
    while (left > 0 && smooth[left - 1] > half_level) --left;
    while (right + 1 < smooth.size() && smooth[right + 1] > half_level) ++right;
    double gamma = (d.freq[right] - d.freq[left]);
    gamma = std::max(gamma, 3.0 * pg.rbw_hz);

    return {amplitude, d.freq[peak], gamma, background};
}

LorentzianFit fit_lorentzian(const Periodogram& pg, const FitWindow& window,
                             const std::array<double, 4>& guess, const FitOptions& opts) {
    for (double g : guess)
        if (!std::isfinite(g)) throw ConfigError("fit guess must be finite");
    if (!(guess[2] > 0)) throw ConfigError("fit guess gamma must be > 0");

    const WindowData d = collect(pg, window);
    const std::size_t n = d.value.size();

    auto eval = [&](const std::vector<double>& p, std::vector<double>& m,
                    std::vector<double>& J) {
        const std::array<double, 4> q{p[0], p[1], p[2], p[3]};
        for (std::size_t i = 0; i < n; ++i) {
            std::array<double, 4> grad;
            detail::lorentzian_model(d.freq[i], q, m[i], grad);
            for (int a = 0; a < 4; ++a) J[i * 4 + static_cast<std::size_t>(a)] = grad[a];
        }
    };

    double ymax = 0;
    for (double v : d.value) ymax = std::max(ymax, std::abs(v));
    const std::vector<double> scales = {ymax, std::abs(guess[1]) + pg.rbw_hz, guess[2], ymax};

    GnOutcome r = gauss_newton(d.value, pg.n_avg, eval,
                               {guess[0], guess[1], guess[2], guess[3]}, {2}, scales, opts);

    LorentzianFit fit;
    fit.amplitude = r.p[0];
    fit.center_hz = r.p[1];
    fit.gamma_hz = r.p[2];
    fit.background = r.p[3];
    std::copy(r.cov.begin(), r.cov.end(), fit.covariance.begin());
    fit.residual_chi2 = r.chi2;
    fit.converged = r.converged;
    fit.iterations = r.iterations;
    fit.resolution_warning = fit.gamma_hz < 3.0 * pg.rbw_hz;
    return fit;
}

SidebandPairFit fit_sideband_pair(const Periodogram& stokes, const FitWindow& stokes_window,
                                  const LorentzianFit& stokes_seed,
                                  const Periodogram& antistokes,
                                  const FitWindow& antistokes_window,
                                  const LorentzianFit& antistokes_seed,
                                  const FitOptions& opts) {
    const WindowData ds = collect(stokes, stokes_window);
    const WindowData da = collect(antistokes, antistokes_window);
    const std::size_t ns = ds.value.size();
    const std::size_t na = da.value.size();

    std::vector<double> y(ns + na);
    std::copy(ds.value.begin(), ds.value.end(), y.begin());
    std::copy(da.value.begin(), da.value.end(), y.begin() + static_cast<long>(ns));
    if (stokes.n_avg != antistokes.n_avg)
        throw ConfigError("sideband pair: windows must share n_avg");

    // p = (A_s, A_as, center magnitude, gamma, B_s, B_as)
    auto eval = [&](const std::vector<double>& p, std::vector<double>& m,
                    std::vector<double>& J) {
        const std::array<double, 6> q{p[0], p[1], p[2], p[3], p[4], p[5]};
        std::array<double, 6> grad;
        for (std::size_t i = 0; i < ns; ++i) {
            detail::sideband_pair_model(ds.freq[i], true, q, m[i], grad);
            for (int a = 0; a < 6; ++a) J[i * 6 + static_cast<std::size_t>(a)] = grad[a];
        }
        for (std::size_t i = 0; i < na; ++i) {
            const std::size_t row = ns + i;
            detail::sideband_pair_model(da.freq[i], false, q, m[row], grad);
            for (int a = 0; a < 6; ++a) J[row * 6 + static_cast<std::size_t>(a)] = grad[a];
        }
    };

    const double center0 = 0.5 * (std::abs(stokes_seed.center_hz) + std::abs(antistokes_seed.center_hz));
    const double gamma0 = 0.5 * (stokes_seed.gamma_hz + antistokes_seed.gamma_hz);
    double ymax = 0;
    for (double v : y) ymax = std::max(ymax, std::abs(v));
    const std::vector<double> scales = {ymax, ymax, center0, gamma0, ymax, ymax};

    GnOutcome r = gauss_newton(
        y, stokes.n_avg, eval,
        {stokes_seed.amplitude, antistokes_seed.amplitude, center0, gamma0,
         stokes_seed.background, antistokes_seed.background},
        {2, 3}, scales, opts);

    SidebandPairFit fit;
    fit.amp_stokes = r.p[0];
    fit.amp_antistokes = r.p[1];
    fit.center_mag_hz = r.p[2];
    fit.gamma_hz = r.p[3];
    fit.bg_stokes = r.p[4];
    fit.bg_antistokes = r.p[5];
    std::copy(r.cov.begin(), r.cov.end(), fit.covariance.begin());
    fit.residual_chi2 = r.chi2;
    fit.converged = r.converged;
    fit.iterations = r.iterations;
    fit.resolution_warning = fit.gamma_hz < 3.0 * stokes.rbw_hz;
    return fit;
}

BackgroundEstimate estimate_background(
    const Periodogram& pg, const std::vector<std::pair<double, double>>& quiet_regions) {
    std::vector<double> all;
    std::vector<double> region_mean, region_stderr;
    for (const auto& [lo, hi] : quiet_regions) {
        std::vector<double> vals;
        for (std::size_t i = 0; i < pg.freqs_hz.size(); ++i)
            if (pg.freqs_hz[i] >= lo && pg.freqs_hz[i] <= hi) vals.push_back(pg.values[i]);
        if (vals.empty()) continue;
        const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
        double var = 0;
        for (double v : vals) var += (v - mean) * (v - mean);
        var = vals.size() > 1 ? var / (vals.size() - 1) : 0.0;
        region_mean.push_back(mean);
        region_stderr.push_back(std::sqrt(var / vals.size()));
        all.insert(all.end(), vals.begin(), vals.end());
    }
    if (all.empty()) throw EmptyRegion();

    BackgroundEstimate est;
    est.level = std::accumulate(all.begin(), all.end(), 0.0) / all.size();
    double var = 0;
    for (double v : all) var += (v - est.level) * (v - est.level);
    var = all.size() > 1 ? var / (all.size() - 1) : 0.0;
    est.sigma = std::sqrt(var / all.size());

    // A region sitting well above the coolest region has picked up a peak tail.
    const double reference = *std::min_element(region_mean.begin(), region_mean.end());
    for (std::size_t r = 0; r < region_mean.size(); ++r)
        if (region_stderr[r] > 0 && region_mean[r] - reference > 5.0 * region_stderr[r])
            est.contamination_warning = true;
    return est;
}

BandIntegral integrate_band(const Periodogram& pg, double center_hz, double half_width_hz,
                            double background_level, double background_sigma) {
    if (pg.freqs_hz.empty()) throw BandOutsideWindow();
    const double lo = center_hz - half_width_hz;
    const double hi = center_hz + half_width_hz;
    if (lo < pg.freqs_hz.front() - 0.5 * pg.rbw_hz || hi > pg.freqs_hz.back() + 0.5 * pg.rbw_hz)
        throw BandOutsideWindow();

    BandIntegral out;
    double var = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < pg.freqs_hz.size(); ++i) {
        const double f = pg.freqs_hz[i];
        if (f < lo || f > hi) continue;
        out.area += (pg.values[i] - background_level) * pg.rbw_hz;
        const double s = pg.values[i] / std::sqrt(pg.n_avg);
        var += s * s * pg.rbw_hz * pg.rbw_hz;
        ++count;
    }
    var += static_cast<double>(count) * pg.rbw_hz * background_sigma *
           static_cast<double>(count) * pg.rbw_hz * background_sigma;
    out.sigma = std::sqrt(var);
    return out;
}

}  // namespace rrt
