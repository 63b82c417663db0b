#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rrt/physics.hpp"

namespace rrt {

/// Smooth multiplicative detection response, h(nu) = c0 + c1 (nu/nu_ref) +
/// c2 (nu/nu_ref)^2 with nu_ref the primary mechanical frequency. A linear c1
/// tilts the two sidebands against each other, which is exactly what the tone
/// calibration has to undo.
struct HetResponse {
    std::array<double, 3> coeff{1.0, 0.0, 0.0};
    double ref_freq_hz = 1.0;

    double eval(double freq_hz) const {
        const double x = freq_hz / ref_freq_hz;
        return coeff[0] + x * (coeff[1] + x * coeff[2]);
    }
};

/// One mechanical mode's pair of Raman sidebands. Peak heights are stored in
/// quanta units referenced to zp_ref_gamma_hz (see SpectrumModel): the Stokes
/// peak of an n=0 mode at the reference linewidth has height 1.
struct ModeTerm {
    double center_hz = 0;      // sideband offset magnitude from the carrier
    double gamma_hz = 0;       // damped FWHM
    double n_bar = 0;
    double response_weight = 1.0;  // (g0_mode / g0_primary)^2
    double zp_scale = 1.0;         // (zp_ref_gamma / gamma)^2, set by compose
};

/// Damping-independent thermal line from the support structure, added
/// identically to both sidebands (resonant probe). Amplitude is an absolute
/// peak height in the model's reference quanta units.
struct SubstrateLine {
    double center_hz = 0;  // offset magnitude from the carrier
    double gamma_hz = 0;
    double amplitude = 0;
};

/// Near-degenerate second drumhead mode riding along with the primary.
struct SpectatorConfig {
    bool enabled = false;
    double offset_hz = 7.2e3;   // resonance offset above the primary
    double g0_ratio = 0.25;     // g0_spectator / g0_primary
    double gamma0_hz = 0;       // 0 -> same intrinsic linewidth as the primary
};

struct Device {
    MechMode mode;
    SpectatorConfig spectator;
};

/// Everything compose_model needs beyond the physics: noise terms, detector
/// response and the simulated operating-point constants.
struct NoiseConfig {
    PowerCoupling coupling;                  // damp_rate 0 -> physical default
    std::vector<SubstrateLine> substrate;
    double white_background = 0;
    double beta_stokes = 0;                  // classical-noise sideband biases,
    double beta_antistokes = 0;              // each bounded by |beta| <= 0.05
    std::array<double, 3> het_response{1.0, 0.0, 0.0};
    double gain = 1.0;
    double zp_ref_gamma_hz = 0;              // 0 -> the point's own Gamma_m
};

/// Two-sided analytic PSD model: primary sidebands at +-nu_m, spectator
/// terms, substrate lines mirrored onto both sidebands, and a white
/// detection background, all under one gain and the detection response.
struct SpectrumModel {
    ModeTerm primary;
    std::vector<ModeTerm> spectators;
    std::vector<SubstrateLine> substrate;
    double white_background = 0;
    double gain = 1.0;
    HetResponse response;
    double beta_stokes = 0;
    double beta_antistokes = 0;
    double zp_ref_gamma_hz = 0;

    void validate() const;
};

enum class Window { stokes, antistokes, calibration_stokes, calibration_antistokes };

std::string window_name(Window w);
bool is_stokes_side(Window w);

/// Binned, noise-realized spectrum. Frequencies are bin centers relative to
/// the carrier; the Stokes window is negative.
struct Periodogram {
    Window window = Window::stokes;
    std::vector<double> freqs_hz;
    std::vector<double> values;
    double rbw_hz = 0;
    double n_avg = 1;
    std::uint64_t seed = 0;
};

/// Evaluate the noiseless model PSD (detector units) at one frequency.
double ideal_psd(double freq_hz, const SpectrumModel& model);

/// Peak-normalized Lorentzian (gamma/2)^2 / ((gamma/2)^2 + (f - c)^2).
double lorentzian_peak(double freq_hz, double center_hz, double gamma_hz);

/// Assemble the spectrum model for one operating point from the damped
/// steady state. Throws RegimeViolation when the damping regime or the
/// spectator-mode response guard is violated.
SpectrumModel compose_model(const Device& device, const CavityParams& cavity,
                            const Environment& env, double p_damp_watts,
                            double p_probe_watts, const NoiseConfig& noise);

/// Response suppression |g0 chi(nu_m)|^2 of the primary over the spectator,
/// evaluated at the primary resonance. Values near or below 10 signal that
/// mode hybridization could no longer be neglected.
double spectator_response_suppression(double g0_ratio, double gamma_primary_hz,
                                      double gamma_spectator_hz, double offset_hz);

/// Realize one analysis window as an averaged periodogram. Each bin is
/// ideal_psd(bin center) times an independent Gamma(n_avg, 1/n_avg) draw from
/// a counter-based stream keyed by (seed, window, bin), so identical seeds
/// reproduce bit-identical output and windows may be generated concurrently.
Periodogram synthesize_periodogram(const SpectrumModel& model, Window window,
                                   double span_hz, double rbw_hz, double n_avg,
                                   std::uint64_t seed, bool noiseless = false);

/// Symmetric pair of delta-like calibration tones at +-tone_freq riding on
/// the model background; the ratio of detected tone powers measures
/// h(-nu)/h(+nu).
std::pair<Periodogram, Periodogram> calibration_tone_pair(
    const SpectrumModel& model, double tone_freq_hz, double tone_power,
    double span_hz, double rbw_hz, double n_avg, std::uint64_t seed,
    bool noiseless = false);

/// CSV persistence: header `freq_hz,psd,rbw_hz,n_avg,window,seed`, one row
/// per bin, shortest round-trip float formatting (byte-stable given a seed).
void write_periodogram_csv(const std::string& path, const Periodogram& pg);
Periodogram read_periodogram_csv(const std::string& path);

}  // namespace rrt
