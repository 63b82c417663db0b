#pragma once

#include <array>
#include <string>

namespace rrt {

/// Fixed CODATA constants. All frequencies elsewhere in the library are
/// ordinary frequencies in Hz (rates quoted as X/2pi), so thermal factors use
/// h*nu with h = 2*pi*hbar.
struct PhysConsts {
    double hbar = 1.054571817e-34;  // J s
    double kb = 1.380649e-23;       // J/K

    double h() const { return 6.283185307179586476925287 * hbar; }
};

/// One drumhead mode of the membrane.
struct MechMode {
    std::array<int, 2> label{0, 0};  // (m, n) antinode counts
    double freq_hz = 0;              // nu_m = omega_m/2pi
    double gamma0_hz = 0;            // intrinsic linewidth Gamma_0/2pi
    double g0_hz = 0;                // single-photon coupling g_0/2pi

    void validate() const;
    std::string name() const;
};

struct CavityParams {
    double kappa_hz = 0;          // optical linewidth kappa/2pi
    double wavelength_m = 1.064e-6;
    double input_efficiency = 1.0;  // in (0, 1]

    void validate() const;
};

struct Environment {
    double t0_kelvin = 0;  // cryostat bath temperature

    void validate() const;
};

/// Steady state of one optically damped mode.
struct DampedState {
    double gamma_m_hz = 0;    // total damped linewidth
    double n_bar = 0;         // total occupation = n_th_damped + n_ba
    double n_th_damped = 0;   // thermal part, cooled by Gamma_0/Gamma_m
    double n_ba = 0;          // radiation-pressure shot-noise backaction part
};

/// Power-to-rate conversion constants. Both have documented physical
/// defaults, but the analysis pipeline is self-calibrating and never reads
/// them; they only set simulated operating points, so configs may override
/// them freely.
struct PowerCoupling {
    double damp_rate_hz_per_watt = 0;   // Gamma_opt/2pi = c_d * P_d
    double qba_rate_hz_per_watt = 0;    // Gamma_qba/2pi = c_q * P_p
};

/// Bose-Einstein occupation 1/(exp(h nu / k T) - 1), evaluated with expm1 so
/// the tiny undamped asymmetries (~1e-5) keep full precision. Below
/// x = 1e-12 the expansion 1/x - 1/2 + x/12 is used.
double thermal_occupation(double freq_hz, double t_kelvin, const PhysConsts& c = {});

/// Exact inverse of thermal_occupation: T = h nu / (k ln(1 + 1/n)).
double temperature_from_occupation(double n_bar, double freq_hz, const PhysConsts& c = {});

/// Stokes/anti-Stokes weight ratio (n+1)/n of a thermal mode.
double sideband_ratio(double n_bar);

/// n = 1/(R - 1). Throws NonPhysicalRatio for R <= 1.
double occupation_from_ratio(double r_sa);

/// Resolved-sideband damping coefficient, Hz per watt of damping-beam power:
/// c_d = 4 g0^2 n_c(1 W) / kappa with the resonant intracavity photon number
/// n_c = 4 eta P / (h nu_L * 2pi kappa). Used when a config does not pin the
/// coefficient explicitly.
double damping_coefficient(const MechMode& mode, const CavityParams& cavity,
                           const PhysConsts& c = {});

/// Gamma_opt/2pi = c_d * P_d; zero power gives zero damping.
double optical_damping_rate(double p_damp_watts, double damp_rate_hz_per_watt);
double optical_damping_rate(double p_damp_watts, const MechMode& mode,
                            const CavityParams& cavity, const PhysConsts& c = {});

/// Backaction occupation n_ba = Gamma_qba / Gamma_m at the current damped
/// linewidth, with Gamma_qba = c_q * P_p.
double backaction_occupation(double p_probe_watts, double qba_rate_hz_per_watt,
                             double gamma_m_hz);

/// Full damped steady state: Gamma_m = Gamma_0 + Gamma_opt,
/// n_th -> n_th * Gamma_0/Gamma_m, plus backaction. Enforces the
/// Gamma_0 << Gamma_m << kappa regime; throws RegimeViolation when
/// Gamma_m >= kappa/10.
DampedState damped_state(const MechMode& mode, const CavityParams& cavity,
                         const Environment& env, double p_damp_watts,
                         double p_probe_watts, const PowerCoupling& coupling,
                         const PhysConsts& c = {});

}  // namespace rrt
