#include "rrt/physics.hpp"

#include <cmath>
#include <stdexcept>

#include "rrt/errors.hpp"

namespace rrt {

void MechMode::validate() const {
    if (!(freq_hz > 0)) throw ConfigError("mode " + name() + ": freq_hz must be > 0");
    if (!(gamma0_hz > 0)) throw ConfigError("mode " + name() + ": gamma0_hz must be > 0");
    if (!(gamma0_hz < 1e-2 * freq_hz))
        throw ConfigError("mode " + name() + ": gamma0_hz must be << freq_hz");
    if (g0_hz < 0) throw ConfigError("mode " + name() + ": g0_hz must be >= 0");
}

std::string MechMode::name() const {
    return "(" + std::to_string(label[0]) + "," + std::to_string(label[1]) + ")";
}

void CavityParams::validate() const {
    if (!(kappa_hz > 0)) throw ConfigError("cavity.kappa_hz must be > 0");
    if (!(wavelength_m > 0)) throw ConfigError("cavity.wavelength_m must be > 0");
    if (!(input_efficiency > 0) || input_efficiency > 1)
        throw ConfigError("cavity.input_efficiency must be in (0, 1]");
}

void Environment::validate() const {
    if (!(t0_kelvin > 0)) throw ConfigError("environment.t0_kelvin must be > 0");
}

double thermal_occupation(double freq_hz, double t_kelvin, const PhysConsts& c) {
    if (!(freq_hz > 0)) throw std::domain_error("thermal_occupation: freq_hz must be > 0");
    if (!(t_kelvin > 0)) throw std::domain_error("thermal_occupation: t_kelvin must be > 0");
    const double x = c.h() * freq_hz / (c.kb * t_kelvin);
    if (x < 1e-12) return 1.0 / x - 0.5 + x / 12.0;
    return 1.0 / std::expm1(x);
}

double temperature_from_occupation(double n_bar, double freq_hz, const PhysConsts& c) {
    if (!(n_bar > 0)) throw std::domain_error("temperature_from_occupation: n_bar must be > 0");
    if (!(freq_hz > 0))
        throw std::domain_error("temperature_from_occupation: freq_hz must be > 0");
    return c.h() * freq_hz / (c.kb * std::log1p(1.0 / n_bar));
}

double sideband_ratio(double n_bar) {
    if (!(n_bar > 0)) throw std::domain_error("sideband_ratio: n_bar must be > 0");
    return (n_bar + 1.0) / n_bar;
}

double occupation_from_ratio(double r_sa) {
    if (!(r_sa > 1.0)) throw NonPhysicalRatio(r_sa);
    return 1.0 / (r_sa - 1.0);
}

double damping_coefficient(const MechMode& mode, const CavityParams& cavity,
                           const PhysConsts& c) {
    const double nu_laser = 2.99792458e8 / cavity.wavelength_m;
    const double two_pi = 6.283185307179586476925287;
    // photons per watt of drive, resonant cavity
    const double nc_per_watt =
        4.0 * cavity.input_efficiency / (c.h() * nu_laser * two_pi * cavity.kappa_hz);
    return 4.0 * mode.g0_hz * mode.g0_hz * nc_per_watt / cavity.kappa_hz;
}

double optical_damping_rate(double p_damp_watts, double damp_rate_hz_per_watt) {
    if (p_damp_watts < 0)
        throw std::domain_error("optical_damping_rate: p_damp_watts must be >= 0");
    return damp_rate_hz_per_watt * p_damp_watts;
}

double optical_damping_rate(double p_damp_watts, const MechMode& mode,
                            const CavityParams& cavity, const PhysConsts& c) {
    return optical_damping_rate(p_damp_watts, damping_coefficient(mode, cavity, c));
}

double backaction_occupation(double p_probe_watts, double qba_rate_hz_per_watt,
                             double gamma_m_hz) {
    if (!(gamma_m_hz > 0))
        throw std::domain_error("backaction_occupation: gamma_m_hz must be > 0");
    return qba_rate_hz_per_watt * p_probe_watts / gamma_m_hz;
}

DampedState damped_state(const MechMode& mode, const CavityParams& cavity,
                         const Environment& env, double p_damp_watts,
                         double p_probe_watts, const PowerCoupling& coupling,
                         const PhysConsts& c) {
    mode.validate();
    cavity.validate();
    env.validate();

    const double gamma_opt = optical_damping_rate(p_damp_watts, coupling.damp_rate_hz_per_watt);
    const double gamma_m = mode.gamma0_hz + gamma_opt;
    if (gamma_m >= 0.1 * cavity.kappa_hz)
        throw RegimeViolation("Gamma_m = " + std::to_string(gamma_m) +
                              " Hz is not << kappa = " + std::to_string(cavity.kappa_hz) + " Hz");

    DampedState s;
    s.gamma_m_hz = gamma_m;
    s.n_th_damped =
        thermal_occupation(mode.freq_hz, env.t0_kelvin, c) * mode.gamma0_hz / gamma_m;
    s.n_ba = backaction_occupation(p_probe_watts, coupling.qba_rate_hz_per_watt, gamma_m);
    s.n_bar = s.n_th_damped + s.n_ba;
    return s;
}

}  // namespace rrt
