#pragma once

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "rrt/spectrum.hpp"

namespace rrt {

/// Fit range with optional sub-ranges removed from the residual set (used to
/// mask substrate clutter and the near-degenerate spectator mode).
struct FitWindow {
    double lo_hz = 0;
    double hi_hz = 0;
    std::vector<std::pair<double, double>> exclusions;

    bool contains(double f) const;
    void validate() const;
};

struct FitOptions {
    int max_iters = 200;
    double step_tol = 1e-8;    // relative parameter step
    double chi2_tol = 1e-10;   // relative chi^2 change
};

/// Single Lorentzian + flat background. Parameter order in the covariance is
/// (amplitude, center_hz, gamma_hz, background).
struct LorentzianFit {
    double amplitude = 0;   // peak height above background
    double center_hz = 0;
    double gamma_hz = 0;    // FWHM
    double background = 0;
    std::array<double, 16> covariance{};
    double residual_chi2 = 0;
    bool converged = false;
    int iterations = 0;
    bool resolution_warning = false;  // gamma below 3 x rbw: height/width biased

    double sigma(int i) const;
};

/// Joint two-window fit sharing one linewidth and one center magnitude.
/// Parameter order: (amp_stokes, amp_antistokes, center_mag_hz, gamma_hz,
/// bg_stokes, bg_antistokes).
struct SidebandPairFit {
    double amp_stokes = 0;
    double amp_antistokes = 0;
    double center_mag_hz = 0;
    double gamma_hz = 0;
    double bg_stokes = 0;
    double bg_antistokes = 0;
    std::array<double, 36> covariance{};
    double residual_chi2 = 0;
    bool converged = false;
    int iterations = 0;
    bool resolution_warning = false;

    double sigma(int i) const;
};

/// Starting point (amplitude, center, gamma, background) from robust data
/// statistics. Throws FlatSpectrum when no bin rises 3 robust sigma above the
/// median of the window.
std::array<double, 4> initial_guess(const Periodogram& pg, const FitWindow& window);

/// Damped Gauss-Newton weighted least squares against the included bins.
/// Per-bin variances follow the multiplicative noise model,
/// sigma_i = model_i / sqrt(n_avg), re-evaluated from the current model each
/// iteration; covariance is the inverse weighted normal matrix at the
/// solution.
LorentzianFit fit_lorentzian(const Periodogram& pg, const FitWindow& window,
                             const std::array<double, 4>& guess,
                             const FitOptions& opts = {});

/// Joint refit of both sidebands with shared gamma and |center|, seeded from
/// the two independent fits.
SidebandPairFit fit_sideband_pair(const Periodogram& stokes, const FitWindow& stokes_window,
                                  const LorentzianFit& stokes_seed,
                                  const Periodogram& antistokes,
                                  const FitWindow& antistokes_window,
                                  const LorentzianFit& antistokes_seed,
                                  const FitOptions& opts = {});

struct BackgroundEstimate {
    double level = 0;
    double sigma = 0;
    bool contamination_warning = false;  // a quiet region looks 5 sigma hot
};

/// Mean and standard error over the quiet-region bins.
BackgroundEstimate estimate_background(const Periodogram& pg,
                                       const std::vector<std::pair<double, double>>& quiet_regions);

struct BandIntegral {
    double area = 0;   // integral of (psd - background) over the band, Hz-weighted
    double sigma = 0;
};

/// Rectangle-rule sum of (bin - background) * rbw over bins whose centers lie
/// in [center - hw, center + hw], with independent-bin error propagation.
BandIntegral integrate_band(const Periodogram& pg, double center_hz, double half_width_hz,
                            double background_level, double background_sigma = 0);

namespace detail {

/// Invert a small symmetric matrix in place (row-major n x n); throws
/// SingularNormalMatrix. Exposed for tests.
void invert_symmetric(std::vector<double>& m, std::size_t n);

/// Lorentzian + flat background, p = (A, center, gamma, B), with the analytic
/// gradient used by the fitter.
void lorentzian_model(double freq_hz, const std::array<double, 4>& p, double& value,
                      std::array<double, 4>& grad);

/// Shared-linewidth pair model, p = (A_s, A_as, center_mag, gamma, B_s, B_as).
void sideband_pair_model(double freq_hz, bool stokes_side, const std::array<double, 6>& p,
                         double& value, std::array<double, 6>& grad);

}  // namespace detail

}  // namespace rrt
