#pragma once

#include <array>
#include <string>
#include <vector>

#include "rrt/fit.hpp"
#include "rrt/physics.hpp"
#include "rrt/spectrum.hpp"

namespace rrt {

/// Detected Stokes/anti-Stokes response ratio of the heterodyne chain,
/// measured with a symmetric tone pair. Raw sideband ratios are divided by
/// rho before any occupation is inferred.
struct ResponseRatio {
    double rho = 1.0;
    double sigma = 0.0;
};

/// One damping power of a sweep: calibrated ratio and fitted linewidth.
struct RatioPoint {
    double p_damp_watts = 0;
    double r_sa = 0;
    double r_sigma = 0;
    double gamma_m_hz = 0;
    double gamma_sigma = 0;
};

struct SystematicEntry {
    std::string name;
    double value = 0;
    std::string note;
};

enum class Method { peak_ratio, band_ratio, extrapolation };

std::string method_name(Method m);

/// Occupation / temperature estimate with itemized error budget. The
/// systematics list is always present, zero-valued entries included.
struct ThermometryResult {
    Method method = Method::peak_ratio;
    double r_sa = 0;
    double r_sigma = 0;
    bool n_bar_valid = false;          // false when R <= 1 (no finite estimate)
    bool unbounded_consistent = false; // R - 1 within one sigma of zero
    double n_bar = 0;
    double n_bar_sigma = 0;
    double t_eff_kelvin = 0;
    double t_eff_sigma = 0;
    double t0_kelvin = 0;              // physical temperature (extrapolation)
    double stat_sigma = 0;             // sigma of the headline number
    std::vector<SystematicEntry> systematics;

    SystematicEntry* find_systematic(const std::string& name);
};

std::vector<SystematicEntry> default_systematics();

/// Ratio of detected tone powers, Stokes side over anti-Stokes side. The
/// tone is located by frequency; its power is the tone-bin excess over the
/// local background, so the quoted sigma is tone-SNR propagated.
ResponseRatio heterodyne_calibration(const Periodogram& cal_stokes,
                                     const Periodogram& cal_antistokes,
                                     double tone_freq_hz);

struct RatioEstimate {
    double r_sa = 0;
    double r_sigma = 0;
    SidebandPairFit joint;  // populated by the peak method
};

/// Calibrated peak-height ratio. A joint refit sharing gamma and |center| is
/// applied first; the quoted sigma folds in the joint-fit covariance
/// (including the amplitude-amplitude term) and the calibration sigma.
RatioEstimate ratio_from_peak_fits(const Periodogram& stokes, const FitWindow& stokes_window,
                                   const LorentzianFit& stokes_fit,
                                   const Periodogram& antistokes,
                                   const FitWindow& antistokes_window,
                                   const LorentzianFit& antistokes_fit,
                                   const ResponseRatio& rho,
                                   const FitOptions& opts = {});

/// Calibrated band-integral ratio over +-half_width around the resonance.
RatioEstimate ratio_from_bands(const Periodogram& stokes, const Periodogram& antistokes,
                               double center_mag_hz, double half_width_hz,
                               const BackgroundEstimate& stokes_background,
                               const BackgroundEstimate& antistokes_background,
                               const ResponseRatio& rho);

/// n = 1/(R-1) and the matching effective temperature with first-order error
/// propagation. R <= 1 yields a result flagged unbounded instead of a throw.
ThermometryResult occupation_and_teff(double r_sa, double r_sigma, double freq_hz,
                                      Method method = Method::peak_ratio,
                                      const PhysConsts& c = {});

struct LinearFitResult {
    double slope = 0;
    double intercept = 0;
    std::array<double, 4> covariance{};  // row-major (slope, intercept)
    double chi2 = 0;
};

/// Closed-form weighted least squares; exact on collinear data.
LinearFitResult weighted_linear_fit(const std::vector<double>& x, const std::vector<double>& y,
                                    const std::vector<double>& sigma_y);

/// Undamped occupation from the slopes of R vs P_d and Gamma_m vs P_d:
/// n_th = (dGamma_m/dP_d) / (dR/dP_d) / Gamma_0, then T0 from the Bose
/// factor. The R-vs-P intercept floats; (intercept - 1) is reported as the
/// heterodyne-residual systematic. A direct R-vs-Gamma fit is recorded as a
/// cross-check entry.
ThermometryResult extrapolate_t0(const std::vector<RatioPoint>& points, double gamma0_hz,
                                 double freq_hz, const PhysConsts& c = {});

/// Remove the radiation-pressure shot-noise contribution
/// delta_n = c_q P_p / Gamma_0 from an extrapolated occupation and itemize
/// the temperature shift.
void backaction_correction(ThermometryResult& result, double p_probe_watts,
                           double qba_rate_hz_per_watt, double gamma0_hz, double freq_hz,
                           const PhysConsts& c = {});

/// Fractional temperature error bound from the classical-noise sideband
/// biases: |beta_s - beta_as| R/(R-1) (dlnT/dlnn).
double classical_noise_bound(double beta_stokes, double beta_antistokes, double r_sa);

}  // namespace rrt
