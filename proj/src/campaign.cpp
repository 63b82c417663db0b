#include "rrt/campaign.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rrt/errors.hpp"
#include "rrt/rng.hpp"

namespace rrt {

using nlohmann::json;

namespace {

const json* find_path(const json& root, const std::string& path) {
    const json* cur = &root;
    std::size_t start = 0;
    while (start < path.size()) {
        const std::size_t dot = path.find('.', start);
        const std::string key =
            dot == std::string::npos ? path.substr(start) : path.substr(start, dot - start);
        if (!cur->is_object() || !cur->contains(key)) return nullptr;
        cur = &(*cur)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    return cur;
}

template <typename T>
T require(const json& root, const std::string& path) {
    const json* v = find_path(root, path);
    if (!v) throw ConfigError("missing field " + path);
    try {
        return v->get<T>();
    } catch (const json::exception&) {
        throw ConfigError("field " + path + " has the wrong type");
    }
}

template <typename T>
T optional_field(const json& root, const std::string& path, T fallback) {
    const json* v = find_path(root, path);
    if (!v) return fallback;
    try {
        return v->get<T>();
    } catch (const json::exception&) {
        throw ConfigError("field " + path + " has the wrong type");
    }
}

std::vector<std::pair<double, double>> parse_ranges(const json& root, const std::string& path) {
    std::vector<std::pair<double, double>> out;
    const json* v = find_path(root, path);
    if (!v) return out;
    if (!v->is_array()) throw ConfigError("field " + path + " must be an array of [lo, hi]");
    for (const auto& e : *v) {
        if (!e.is_array() || e.size() != 2)
            throw ConfigError("field " + path + " entries must be [lo, hi]");
        out.emplace_back(e[0].get<double>(), e[1].get<double>());
    }
    return out;
}

json ranges_to_json(const std::vector<std::pair<double, double>>& v) {
    json out = json::array();
    for (const auto& [lo, hi] : v) out.push_back(json::array({lo, hi}));
    return out;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex16(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

}  // namespace

void CampaignConfig::validate() const {
    device.mode.validate();
    cavity.validate();
    if (environments_kelvin.empty()) throw ConfigError("environments_kelvin must not be empty");
    for (double t : environments_kelvin) {
        if (!(t > 0)) throw ConfigError("environments_kelvin entries must be > 0");
        gamma0_at(t);  // throws when the table has no entry
    }
    if (damp_powers_watts.empty()) throw ConfigError("damp_powers_watts must not be empty");
    for (std::size_t i = 1; i < damp_powers_watts.size(); ++i)
        if (!(damp_powers_watts[i] > damp_powers_watts[i - 1]))
            throw ConfigError("damp_powers_watts must be strictly increasing");
    if (damp_powers_watts.front() < 0) throw ConfigError("damp_powers_watts must be >= 0");
    if (probe_power_watts < 0) throw ConfigError("probe_power_watts must be >= 0");
    if (!seeds.master_set) throw ConfigError("seeds.master must be set explicitly");
    if (seeds.ensemble < 1) throw ConfigError("seeds.ensemble must be >= 1");
    if (!(acquisition.rbw_hz > 0)) throw ConfigError("acquisition.rbw_hz must be > 0");
    if (!(acquisition.span_hz >= 2 * acquisition.rbw_hz))
        throw ConfigError("acquisition.span_hz must cover at least a few bins");
    if (!(acquisition.n_avg >= 1)) throw ConfigError("acquisition.n_avg must be >= 1");
    if (std::abs(noise.beta_stokes) > 0.05 || std::abs(noise.beta_antistokes) > 0.05)
        throw ConfigError("noise.beta_*: |beta| must be <= 0.05");
    if (!(noise.gain > 0)) throw ConfigError("noise.gain must be > 0");
    if (!(analysis.band_halfwidth_hz > 0))
        throw ConfigError("analysis.band_halfwidth_hz must be > 0");
}

double CampaignConfig::gamma0_at(double t_kelvin) const {
    auto it = gamma0_hz_by_t.find(t_kelvin);
    if (it == gamma0_hz_by_t.end())
        throw ConfigError("device.gamma0_hz_by_t has no entry for T = " +
                          std::to_string(t_kelvin) + " K");
    return it->second;
}

CampaignConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("not valid JSON: ") + e.what());
    }

    CampaignConfig c;
    c.schema_version = require<int>(j, "schema_version");
    if (c.schema_version != 1)
        throw ConfigError("schema_version " + std::to_string(c.schema_version) +
                          " is not supported (expected 1)");
    c.description = optional_field<std::string>(j, "description", "");

    auto label = require<std::vector<int>>(j, "device.label");
    if (label.size() != 2) throw ConfigError("device.label must be [m, n]");
    c.device.mode.label = {label[0], label[1]};
    c.device.mode.freq_hz = require<double>(j, "device.freq_hz");
    c.device.mode.g0_hz = require<double>(j, "device.g0_hz");

    const json* table = find_path(j, "device.gamma0_hz_by_t");
    if (!table || !table->is_object() || table->empty())
        throw ConfigError("missing field device.gamma0_hz_by_t");
    for (auto it = table->begin(); it != table->end(); ++it) {
        double t{};
        try {
            t = std::stod(it.key());
        } catch (...) {
            throw ConfigError("device.gamma0_hz_by_t key '" + it.key() + "' is not a number");
        }
        c.gamma0_hz_by_t[t] = it.value().get<double>();
    }
    c.device.mode.gamma0_hz = c.gamma0_hz_by_t.begin()->second;

    c.device.spectator.enabled = optional_field<bool>(j, "device.spectator.enabled", false);
    c.device.spectator.offset_hz = optional_field<double>(j, "device.spectator.offset_hz", 7.2e3);
    c.device.spectator.g0_ratio = optional_field<double>(j, "device.spectator.g0_ratio", 0.25);
    c.device.spectator.gamma0_hz = optional_field<double>(j, "device.spectator.gamma0_hz", 0.0);

    c.cavity.kappa_hz = require<double>(j, "cavity.kappa_hz");
    c.cavity.wavelength_m = optional_field<double>(j, "cavity.wavelength_m", 1.064e-6);
    c.cavity.input_efficiency = optional_field<double>(j, "cavity.input_efficiency", 1.0);

    c.environments_kelvin = require<std::vector<double>>(j, "environments_kelvin");
    c.probe_power_watts = require<double>(j, "probe_power_watts");
    c.probe_power_sweep_watts =
        optional_field<std::vector<double>>(j, "probe_power_sweep_watts", {});
    c.damp_powers_watts = require<std::vector<double>>(j, "damp_powers_watts");

    c.noise.coupling.damp_rate_hz_per_watt =
        optional_field<double>(j, "noise.damp_coeff_hz_per_watt", 0.0);
    c.noise.coupling.qba_rate_hz_per_watt =
        optional_field<double>(j, "noise.qba_rate_hz_per_watt", 0.0);
    if (const json* lines = find_path(j, "noise.substrate_lines")) {
        if (!lines->is_array()) throw ConfigError("noise.substrate_lines must be an array");
        for (const auto& e : *lines) {
            SubstrateLine line;
            line.center_hz = require<double>(e, "center_hz");
            line.gamma_hz = require<double>(e, "gamma_hz");
            line.amplitude = require<double>(e, "amplitude");
            c.noise.substrate.push_back(line);
        }
    }
    c.noise.white_background = optional_field<double>(j, "noise.white_background", 0.0);
    c.noise.beta_stokes = optional_field<double>(j, "noise.beta_stokes", 0.0);
    c.noise.beta_antistokes = optional_field<double>(j, "noise.beta_antistokes", 0.0);
    auto het = optional_field<std::vector<double>>(j, "noise.het_response", {1.0, 0.0, 0.0});
    if (het.size() != 3) throw ConfigError("noise.het_response must have 3 coefficients");
    c.noise.het_response = {het[0], het[1], het[2]};
    c.noise.gain = optional_field<double>(j, "noise.gain", 1.0);
    c.noise.zp_ref_gamma_hz = optional_field<double>(j, "noise.zp_ref_gamma_hz", 0.0);

    c.acquisition.rbw_hz = require<double>(j, "acquisition.rbw_hz");
    c.acquisition.span_hz = require<double>(j, "acquisition.span_hz");
    c.acquisition.n_avg = require<double>(j, "acquisition.n_avg");
    c.acquisition.noiseless = optional_field<bool>(j, "acquisition.noiseless", false);
    c.acquisition.tone_power = optional_field<double>(j, "acquisition.tone_power", 0.0);
    c.acquisition.tone_offset_hz = optional_field<double>(j, "acquisition.tone_offset_hz", 0.0);

    c.analysis.fit_rel_lo_hz = optional_field<double>(j, "analysis.fit_rel_lo_hz", 0.0);
    c.analysis.fit_rel_hi_hz = optional_field<double>(j, "analysis.fit_rel_hi_hz", 0.0);
    c.analysis.exclusions_rel_hz = parse_ranges(j, "analysis.exclusions_rel_hz");
    c.analysis.quiet_regions_rel_hz = parse_ranges(j, "analysis.quiet_regions_rel_hz");
    c.analysis.band_halfwidth_hz = optional_field<double>(j, "analysis.band_halfwidth_hz", 2000.0);
    c.analysis.band_offsets_hz = optional_field<std::vector<double>>(j, "analysis.band_offsets_hz", {});
    const std::string method = optional_field<std::string>(j, "analysis.method", "peak_ratio");
    if (method == "peak_ratio") c.analysis.method = Method::peak_ratio;
    else if (method == "band_ratio") c.analysis.method = Method::band_ratio;
    else throw ConfigError("analysis.method must be peak_ratio or band_ratio");

    const json* master = find_path(j, "seeds.master");
    if (!master) throw ConfigError("missing field seeds.master");
    c.seeds.master = master->get<std::uint64_t>();
    c.seeds.master_set = true;
    c.seeds.ensemble = optional_field<int>(j, "seeds.ensemble", 1);

    c.validate();
    return c;
}

std::string serialize_config(const CampaignConfig& c) {
    json j;
    j["schema_version"] = c.schema_version;
    j["description"] = c.description;
    j["device"]["label"] = {c.device.mode.label[0], c.device.mode.label[1]};
    j["device"]["freq_hz"] = c.device.mode.freq_hz;
    j["device"]["g0_hz"] = c.device.mode.g0_hz;
    {
        json table = json::object();
        for (const auto& [t, g] : c.gamma0_hz_by_t) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.17g", t);
            table[buf] = g;
        }
        j["device"]["gamma0_hz_by_t"] = table;
    }
    j["device"]["spectator"] = {{"enabled", c.device.spectator.enabled},
                                {"offset_hz", c.device.spectator.offset_hz},
                                {"g0_ratio", c.device.spectator.g0_ratio},
                                {"gamma0_hz", c.device.spectator.gamma0_hz}};
    j["cavity"] = {{"kappa_hz", c.cavity.kappa_hz},
                   {"wavelength_m", c.cavity.wavelength_m},
                   {"input_efficiency", c.cavity.input_efficiency}};
    j["environments_kelvin"] = c.environments_kelvin;
    j["probe_power_watts"] = c.probe_power_watts;
    j["probe_power_sweep_watts"] = c.probe_power_sweep_watts;
    j["damp_powers_watts"] = c.damp_powers_watts;
    json lines = json::array();
    for (const auto& s : c.noise.substrate)
        lines.push_back({{"center_hz", s.center_hz},
                         {"gamma_hz", s.gamma_hz},
                         {"amplitude", s.amplitude}});
    j["noise"] = {{"damp_coeff_hz_per_watt", c.noise.coupling.damp_rate_hz_per_watt},
                  {"qba_rate_hz_per_watt", c.noise.coupling.qba_rate_hz_per_watt},
                  {"substrate_lines", lines},
                  {"white_background", c.noise.white_background},
                  {"beta_stokes", c.noise.beta_stokes},
                  {"beta_antistokes", c.noise.beta_antistokes},
                  {"het_response", c.noise.het_response},
                  {"gain", c.noise.gain},
                  {"zp_ref_gamma_hz", c.noise.zp_ref_gamma_hz}};
    j["acquisition"] = {{"rbw_hz", c.acquisition.rbw_hz},
                        {"span_hz", c.acquisition.span_hz},
                        {"n_avg", c.acquisition.n_avg},
                        {"noiseless", c.acquisition.noiseless},
                        {"tone_power", c.acquisition.tone_power},
                        {"tone_offset_hz", c.acquisition.tone_offset_hz}};
    j["analysis"] = {{"fit_rel_lo_hz", c.analysis.fit_rel_lo_hz},
                     {"fit_rel_hi_hz", c.analysis.fit_rel_hi_hz},
                     {"exclusions_rel_hz", ranges_to_json(c.analysis.exclusions_rel_hz)},
                     {"quiet_regions_rel_hz", ranges_to_json(c.analysis.quiet_regions_rel_hz)},
                     {"band_halfwidth_hz", c.analysis.band_halfwidth_hz},
                     {"band_offsets_hz", c.analysis.band_offsets_hz},
                     {"method", method_name(c.analysis.method)}};
    j["seeds"] = {{"master", c.seeds.master}, {"ensemble", c.seeds.ensemble}};
    return j.dump(2) + "\n";
}

CampaignConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_hash(const CampaignConfig& config) {
    return hex16(fnv1a(serialize_config(config)));
}

// ---------------------------------------------------------------------------
// presets

namespace {

CampaignConfig base_membrane_32() {
    CampaignConfig c;
    c.device.mode.label = {3, 2};
    c.device.mode.freq_hz = 2.637e6;
    c.device.mode.g0_hz = 18.0;
    c.gamma0_hz_by_t = {{4.8, 0.84}, {10.0, 0.90}, {25.0, 0.98}, {50.0, 1.07}};
    c.device.mode.gamma0_hz = 0.84;
    c.device.spectator = {false, 7.2e3, 0.25, 0.0};
    c.cavity.kappa_hz = 2.7e6;
    c.cavity.wavelength_m = 1.064e-6;
    c.cavity.input_efficiency = 1.0;
    c.probe_power_watts = 26e-6;
    return c;
}

// Probe backaction constant calibrated so the shot-noise correction to the
// extrapolated temperature is 0.2 K for the reference point: 26 uW probe on
// the 2.637 MHz mode with Gamma_0 = 0.84 Hz.
double reference_qba_rate() {
    const PhysConsts pc;
    const double delta_n = pc.kb * 0.2 / (pc.h() * 2.637e6);
    return delta_n * 0.84 / 26e-6;
}

CampaignConfig preset_temperature_extrapolation() {
    CampaignConfig c = base_membrane_32();
    c.description =
        "Physical-temperature extrapolation on the (3,2) mode of the "
        "phononic-crystal membrane at four cryostat setpoints";
    c.environments_kelvin = {4.8, 10.0, 25.0, 50.0};
    c.damp_powers_watts = {3.2e-6, 7e-6, 14e-6, 21e-6, 28e-6};
    c.noise.coupling.damp_rate_hz_per_watt = damping_coefficient(c.device.mode, c.cavity);
    c.noise.coupling.qba_rate_hz_per_watt = reference_qba_rate();
    c.noise.white_background = 0.02;
    c.noise.het_response = {1.0, 0.01, 0.0};  // 1% tilt at nu_m per sideband
    c.noise.zp_ref_gamma_hz =
        0.84 + c.noise.coupling.damp_rate_hz_per_watt * c.damp_powers_watts.back();
    c.acquisition = {100.0, 120e3, 40000.0, false, 2e5, 18e3};
    c.analysis.fit_rel_lo_hz = -45e3;
    c.analysis.fit_rel_hi_hz = 45e3;
    c.analysis.quiet_regions_rel_hz = {{30e3, 44e3}};
    c.analysis.band_halfwidth_hz = 2000.0;
    c.analysis.band_offsets_hz = {-6e3, -4e3, -2e3, 0.0, 2e3, 4e3, 6e3};
    c.analysis.method = Method::peak_ratio;
    c.seeds = {20260810, true, 1};
    return c;
}

CampaignConfig preset_groundstate_sweep() {
    CampaignConfig c;
    c.description =
        "Ground-state approach of the (2,2) mode of the plain-substrate "
        "membrane; band-integrated occupation with substrate clutter below "
        "the resonance";
    c.device.mode.label = {2, 2};
    c.device.mode.freq_hz = 1.509e6;
    c.device.mode.g0_hz = 33.0;
    c.gamma0_hz_by_t = {{4.8, 0.46}};
    c.device.mode.gamma0_hz = 0.46;
    c.device.spectator = {false, 7.2e3, 0.25, 0.0};
    c.cavity.kappa_hz = 1.8e6;
    c.cavity.wavelength_m = 1.064e-6;
    c.cavity.input_efficiency = 1.0;
    c.environments_kelvin = {4.8};
    c.probe_power_watts = 5e-6;

    const double c_d = 1.8e9;  // operating point: ~15 kHz damped width at ~8.6 uW
    c.noise.coupling.damp_rate_hz_per_watt = c_d;
    // scale the calibrated reference constant to this device: rate ~ g0^2/kappa^2
    const double g_scale = (33.0 / 18.0) * (33.0 / 18.0);
    const double k_scale = (2.7e6 / 1.8e6) * (2.7e6 / 1.8e6);
    c.noise.coupling.qba_rate_hz_per_watt = reference_qba_rate() * g_scale * k_scale;

    const PhysConsts pc;
    const double n_th = thermal_occupation(1.509e6, 4.8, pc);
    const double decoherence =
        n_th * 0.46 + c.noise.coupling.qba_rate_hz_per_watt * c.probe_power_watts;
    auto power_for = [&](double n_target) {
        return (decoherence / n_target - 0.46) / c_d;
    };
    c.damp_powers_watts = {1.5e-6, 2.5e-6, 4e-6, 6e-6, power_for(2.1), power_for(2.0)};

    const double zp_ref = 0.46 + c_d * power_for(2.1);
    c.noise.zp_ref_gamma_hz = zp_ref;
    // substrate clutter 9-31 kHz below the resonance; amplitudes scaled so
    // the integrated excess over the whole window is 0.9 quanta
    const double nu = 1.509e6;
    std::vector<SubstrateLine> lines = {{nu - 9e3, 2.0e3, 2.4},
                                        {nu - 13e3, 1.8e3, 1.0},
                                        {nu - 18e3, 2.2e3, 1.2},
                                        {nu - 24e3, 2.5e3, 1.1},
                                        {nu - 31e3, 2.0e3, 0.95}};
    double raw_area = 0;
    for (const auto& l : lines) raw_area += l.amplitude * l.gamma_hz;
    for (auto& l : lines) l.amplitude *= 0.9 * zp_ref / raw_area;
    c.noise.substrate = lines;
    c.noise.white_background = 0.05;

    c.acquisition = {100.0, 80e3, 400.0, false, 0.0, 0.0};
    c.analysis.fit_rel_lo_hz = -9e3;  // keep |freq| above the substrate band
    c.analysis.fit_rel_hi_hz = 25e3;
    c.analysis.quiet_regions_rel_hz = {{28e3, 38e3}};
    c.analysis.band_halfwidth_hz = 2000.0;
    c.analysis.band_offsets_hz = {-6e3, -5e3, -4e3, -3e3, -2e3, -1e3, 0.0,
                                  1e3,  2e3,  3e3,  4e3,  5e3,  6e3};
    c.analysis.method = Method::band_ratio;
    c.seeds = {41, true, 1};
    return c;
}

CampaignConfig preset_spectator_pair() {
    CampaignConfig c = base_membrane_32();
    c.description =
        "(3,2) thermometry with the near-degenerate (2,3) mode enabled; fits "
        "exclude the spectator region";
    c.device.spectator.enabled = true;
    c.environments_kelvin = {4.8};
    c.damp_powers_watts = {12.5e-6, 25e-6};
    // moderate damping keeps the hot, narrow spectator tail small under the
    // primary peak and the pair far from hybridization
    c.noise.coupling.damp_rate_hz_per_watt = 1.6e8;
    c.noise.coupling.qba_rate_hz_per_watt = reference_qba_rate();
    c.noise.white_background = 0.02;
    c.noise.zp_ref_gamma_hz = 0.84 + 1.6e8 * 25e-6;
    c.acquisition = {100.0, 40e3, 40000.0, false, 0.0, 0.0};
    c.analysis.fit_rel_lo_hz = -12e3;
    c.analysis.fit_rel_hi_hz = 12e3;
    c.analysis.exclusions_rel_hz = {{5.7e3, 8.7e3}};
    c.analysis.band_halfwidth_hz = 2000.0;
    c.analysis.band_offsets_hz = {-4e3, -2e3, 0.0, 2e3, 4e3};
    c.analysis.method = Method::peak_ratio;
    c.seeds = {77, true, 1};
    return c;
}

CampaignConfig preset_probe_power_sweep() {
    CampaignConfig c = preset_temperature_extrapolation();
    c.description =
        "Extracted physical temperature versus probe power at a fixed 4.8 K "
        "setpoint";
    c.environments_kelvin = {4.8};
    c.probe_power_sweep_watts = {2.6e-6, 6.5e-6, 13e-6, 26e-6};
    c.seeds = {20260811, true, 1};
    return c;
}

}  // namespace

std::vector<std::string> preset_names() {
    return {"groundstate-sweep", "temperature-extrapolation", "spectator-pair",
            "probe-power-sweep"};
}

CampaignConfig preset(const std::string& name) {
    if (name == "groundstate-sweep") return preset_groundstate_sweep();
    if (name == "temperature-extrapolation") return preset_temperature_extrapolation();
    if (name == "spectator-pair") return preset_spectator_pair();
    if (name == "probe-power-sweep") return preset_probe_power_sweep();
    throw ConfigError("unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// analysis

AnalysisSettings make_analysis_settings(const CampaignConfig& config) {
    AnalysisSettings s;
    const double nu = config.device.mode.freq_hz;
    double lo = config.analysis.fit_rel_lo_hz;
    double hi = config.analysis.fit_rel_hi_hz;
    if (lo == 0 && hi == 0) {
        lo = -config.acquisition.span_hz / 2;
        hi = config.acquisition.span_hz / 2;
    }
    s.antistokes_window.lo_hz = nu + lo;
    s.antistokes_window.hi_hz = nu + hi;
    s.stokes_window.lo_hz = -(nu + hi);
    s.stokes_window.hi_hz = -(nu + lo);
    for (const auto& [a, b] : config.analysis.exclusions_rel_hz) {
        s.antistokes_window.exclusions.emplace_back(nu + a, nu + b);
        s.stokes_window.exclusions.emplace_back(-(nu + b), -(nu + a));
    }
    for (const auto& [a, b] : config.analysis.quiet_regions_rel_hz) {
        s.antistokes_quiet.emplace_back(nu + a, nu + b);
        s.stokes_quiet.emplace_back(-(nu + b), -(nu + a));
    }
    s.band_halfwidth_hz = config.analysis.band_halfwidth_hz;
    s.method = config.analysis.method;
    return s;
}

AnalysisSettings default_analysis_settings(const Periodogram& stokes,
                                           const Periodogram& antistokes) {
    AnalysisSettings s;
    s.stokes_window.lo_hz = stokes.freqs_hz.front();
    s.stokes_window.hi_hz = stokes.freqs_hz.back();
    s.antistokes_window.lo_hz = antistokes.freqs_hz.front();
    s.antistokes_window.hi_hz = antistokes.freqs_hz.back();
    return s;
}

PointAnalysis analyze_point(const Periodogram& stokes, const Periodogram& antistokes,
                            const AnalysisSettings& settings, const ResponseRatio& rho,
                            double freq_hint_hz) {
    PointAnalysis pa;
    pa.rho = rho;

    const auto guess_s = initial_guess(stokes, settings.stokes_window);
    const auto guess_a = initial_guess(antistokes, settings.antistokes_window);
    pa.stokes_fit = fit_lorentzian(stokes, settings.stokes_window, guess_s, settings.fit_options);
    pa.antistokes_fit =
        fit_lorentzian(antistokes, settings.antistokes_window, guess_a, settings.fit_options);
    pa.peak = ratio_from_peak_fits(stokes, settings.stokes_window, pa.stokes_fit, antistokes,
                                   settings.antistokes_window, pa.antistokes_fit, rho,
                                   settings.fit_options);

    const double center = freq_hint_hz > 0 ? freq_hint_hz : pa.peak.joint.center_mag_hz;

    BackgroundEstimate bg_s, bg_a;
    if (!settings.stokes_quiet.empty()) {
        bg_s = estimate_background(stokes, settings.stokes_quiet);
        bg_a = estimate_background(antistokes, settings.antistokes_quiet);
    } else {
        bg_s.level = pa.peak.joint.bg_stokes;
        bg_s.sigma = pa.peak.joint.sigma(4);
        bg_a.level = pa.peak.joint.bg_antistokes;
        bg_a.sigma = pa.peak.joint.sigma(5);
    }
    try {
        pa.band = ratio_from_bands(stokes, antistokes, center, settings.band_halfwidth_hz,
                                   bg_s, bg_a, rho);
        pa.band_valid = true;
    } catch (const BandOutsideWindow&) {
        pa.band_valid = false;
    }

    // resolution-limited peaks push the estimate to the band route
    Method use = settings.method;
    if (use == Method::peak_ratio && pa.peak.joint.resolution_warning && pa.band_valid)
        use = Method::band_ratio;
    const RatioEstimate& chosen =
        (use == Method::band_ratio && pa.band_valid) ? pa.band : pa.peak;
    pa.occupation = occupation_and_teff(chosen.r_sa, chosen.r_sigma, center,
                                        (&chosen == &pa.band) ? Method::band_ratio
                                                              : Method::peak_ratio);
    return pa;
}

// ---------------------------------------------------------------------------
// ledger

Ledger::Ledger(std::string directory) : dir_(std::move(directory)) {
    std::filesystem::create_directories(dir_);
}

std::string Ledger::path() const { return dir_; }

void Ledger::record_config(const CampaignConfig& config) {
    const std::string text = serialize_config(config);
    const std::string hash = hex16(fnv1a(text));
    const std::string snap = dir_ + "/config-" + hash + ".json";
    if (std::filesystem::exists(snap)) {
        std::ifstream in(snap);
        std::stringstream ss;
        ss << in.rdbuf();
        if (hex16(fnv1a(ss.str())) != hash)
            throw Error("config snapshot " + snap + " does not match its hash");
    } else {
        std::ofstream out(snap, std::ios::binary);
        out << text;
    }
}

void Ledger::append(const std::string& record_json_line) {
    {
        std::ofstream out(dir_ + "/ledger.jsonl", std::ios::app | std::ios::binary);
        if (!out) throw Error("cannot append to ledger in " + dir_);
        out << record_json_line << "\n";
    }
    const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    std::ofstream meta(dir_ + "/ledger.meta.jsonl", std::ios::app | std::ios::binary);
    meta << json{{"appended_unix_ms", now}}.dump() << "\n";
}

std::vector<std::string> Ledger::read_records(const std::string& directory) {
    std::vector<std::string> out;
    std::ifstream in(directory + "/ledger.jsonl");
    if (!in) return out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

// ---------------------------------------------------------------------------
// campaign execution

namespace {

json systematics_json(const ThermometryResult& r) {
    json arr = json::array();
    for (const auto& s : r.systematics)
        arr.push_back({{"name", s.name}, {"value", s.value}, {"note", s.note}});
    return arr;
}

json result_json(const ThermometryResult& r) {
    return json{{"method", method_name(r.method)},
                {"r_sa", r.r_sa},
                {"r_sigma", r.r_sigma},
                {"n_bar_valid", r.n_bar_valid},
                {"unbounded_consistent", r.unbounded_consistent},
                {"n_bar", r.n_bar},
                {"n_bar_sigma", r.n_bar_sigma},
                {"t_eff_kelvin", r.t_eff_kelvin},
                {"t_eff_sigma", r.t_eff_sigma},
                {"t0_kelvin", r.t0_kelvin},
                {"stat_sigma", r.stat_sigma},
                {"systematics", systematics_json(r)}};
}

struct EnvRunInput {
    int env_index = 0;
    std::uint64_t seed_env = 0;  // env slot used in seed derivation
    double t0 = 0;
    double probe_power = 0;
    bool is_probe_sweep = false;
};

EnvironmentResult run_environment(const CampaignConfig& config, const AnalysisSettings& settings,
                                  const EnvRunInput& in, int replicate, Ledger* ledger,
                                  const std::string& hash) {
    EnvironmentResult env;
    env.env_index = in.env_index;
    env.replicate = replicate;
    env.t0_set_kelvin = in.t0;
    env.probe_power_watts = in.probe_power;

    CampaignConfig cfg = config;
    cfg.device.mode.gamma0_hz = config.gamma0_at(in.t0);
    const double gamma0 = cfg.device.mode.gamma0_hz;
    const Environment bath{in.t0};
    const double nu = cfg.device.mode.freq_hz;
    const std::size_t npow = cfg.damp_powers_watts.size();

    // heterodyne calibration from a tone pair riding on the weakest-damping model
    env.rho = ResponseRatio{1.0, 0.0};
    if (cfg.acquisition.tone_power > 0) {
        const SpectrumModel cal_model =
            compose_model(cfg.device, cfg.cavity, bath, cfg.damp_powers_watts.front(),
                          in.probe_power, cfg.noise);
        const std::uint64_t cal_seed =
            derive_seed(cfg.seeds.master, in.seed_env, npow, replicate);
        const double tone_freq = nu + cfg.acquisition.tone_offset_hz;
        auto [cs, ca] = calibration_tone_pair(cal_model, tone_freq, cfg.acquisition.tone_power,
                                              cfg.acquisition.span_hz, cfg.acquisition.rbw_hz,
                                              cfg.acquisition.n_avg, cal_seed,
                                              cfg.acquisition.noiseless);
        env.rho = heterodyne_calibration(cs, ca, tone_freq);
    }

    std::vector<RatioPoint> good_points;
    std::vector<double> centers;
    for (std::size_t pi = 0; pi < npow; ++pi) {
        PointRecord rec;
        rec.env_index = in.env_index;
        rec.power_index = static_cast<int>(pi);
        rec.replicate = replicate;
        rec.t0_set_kelvin = in.t0;
        rec.p_damp_watts = cfg.damp_powers_watts[pi];
        rec.seed = derive_seed(cfg.seeds.master, in.seed_env, pi, replicate);
        try {
            const SpectrumModel model = compose_model(cfg.device, cfg.cavity, bath,
                                                      rec.p_damp_watts, in.probe_power, cfg.noise);
            rec.n_bar_true = model.primary.n_bar;
            rec.gamma_true_hz = model.primary.gamma_hz;
            const Periodogram st = synthesize_periodogram(
                model, Window::stokes, cfg.acquisition.span_hz, cfg.acquisition.rbw_hz,
                cfg.acquisition.n_avg, rec.seed, cfg.acquisition.noiseless);
            const Periodogram at = synthesize_periodogram(
                model, Window::antistokes, cfg.acquisition.span_hz, cfg.acquisition.rbw_hz,
                cfg.acquisition.n_avg, rec.seed, cfg.acquisition.noiseless);
            const PointAnalysis pa = analyze_point(st, at, settings, env.rho);
            rec.amp_stokes = pa.peak.joint.amp_stokes;
            rec.amp_antistokes = pa.peak.joint.amp_antistokes;
            rec.ratio_point = {rec.p_damp_watts, pa.peak.r_sa, pa.peak.r_sigma,
                               pa.peak.joint.gamma_hz, pa.peak.joint.sigma(3)};
            rec.occupation = pa.occupation;
            good_points.push_back(rec.ratio_point);
            centers.push_back(pa.peak.joint.center_mag_hz);
        } catch (const Error& e) {
            rec.failed = true;
            rec.error = e.what();
        }
        if (ledger) {
            json pj{{"type", "point"},
                    {"config_hash", hash},
                    {"command", "campaign"},
                    {"env_index", rec.env_index},
                    {"power_index", rec.power_index},
                    {"replicate", rec.replicate},
                    {"probe_power_watts", in.probe_power},
                    {"probe_sweep", in.is_probe_sweep},
                    {"t0_set_kelvin", rec.t0_set_kelvin},
                    {"p_damp_watts", rec.p_damp_watts},
                    {"seed", rec.seed},
                    {"failed", rec.failed}};
            if (rec.failed) {
                pj["error"] = rec.error;
            } else {
                pj["n_bar_true"] = rec.n_bar_true;
                pj["gamma_true_hz"] = rec.gamma_true_hz;
                pj["amp_stokes"] = rec.amp_stokes;
                pj["amp_antistokes"] = rec.amp_antistokes;
                pj["r_sa"] = rec.ratio_point.r_sa;
                pj["r_sigma"] = rec.ratio_point.r_sigma;
                pj["gamma_m_hz"] = rec.ratio_point.gamma_m_hz;
                pj["gamma_sigma"] = rec.ratio_point.gamma_sigma;
                pj["occupation"] = result_json(rec.occupation);
            }
            ledger->append(pj.dump());
        }
        env.points.push_back(std::move(rec));
    }

    if (good_points.size() >= 3) {
        try {
            const double freq_used =
                std::accumulate(centers.begin(), centers.end(), 0.0) /
                static_cast<double>(centers.size());
            ThermometryResult ext = extrapolate_t0(good_points, gamma0, freq_used);
            env.t0_raw_kelvin = ext.t0_kelvin;
            backaction_correction(ext, in.probe_power,
                                  cfg.noise.coupling.qba_rate_hz_per_watt, gamma0, freq_used);
            if (auto* s = ext.find_systematic("classical_noise_bound_frac"))
                s->value = classical_noise_bound(cfg.noise.beta_stokes,
                                                 cfg.noise.beta_antistokes,
                                                 good_points.back().r_sa);
            env.extrapolation = std::move(ext);
            env.extrapolation_valid = true;
        } catch (const Error& e) {
            env.error = e.what();
        }
    } else {
        env.error = "fewer than 3 usable points";
    }

    if (ledger) {
        json ej{{"type", "extrapolation"},
                {"config_hash", hash},
                {"command", "campaign"},
                {"env_index", in.env_index},
                {"replicate", replicate},
                {"probe_power_watts", in.probe_power},
                {"probe_sweep", in.is_probe_sweep},
                {"t0_set_kelvin", in.t0},
                {"rho", env.rho.rho},
                {"rho_sigma", env.rho.sigma},
                {"valid", env.extrapolation_valid}};
        if (env.extrapolation_valid) {
            ej["t0_raw_kelvin"] = env.t0_raw_kelvin;
            ej["result"] = result_json(env.extrapolation);
        } else {
            ej["error"] = env.error;
        }
        ledger->append(ej.dump());
    }
    return env;
}

}  // namespace

CampaignOutcome run_campaign(const CampaignConfig& config, Ledger* ledger, int replicate) {
    config.validate();
    const std::string hash = config_hash(config);
    if (ledger) ledger->record_config(config);
    const AnalysisSettings settings = make_analysis_settings(config);

    CampaignOutcome out;
    for (std::size_t e = 0; e < config.environments_kelvin.size(); ++e) {
        EnvRunInput in;
        in.env_index = static_cast<int>(e);
        in.seed_env = e;
        in.t0 = config.environments_kelvin[e];
        in.probe_power = config.probe_power_watts;
        out.environments.push_back(
            run_environment(config, settings, in, replicate, ledger, hash));
    }
    for (std::size_t si = 0; si < config.probe_power_sweep_watts.size(); ++si) {
        EnvRunInput in;
        in.env_index = 0;
        in.seed_env = 0x5000 + si;
        in.t0 = config.environments_kelvin.front();
        in.probe_power = config.probe_power_sweep_watts[si];
        in.is_probe_sweep = true;
        out.environments.push_back(
            run_environment(config, settings, in, replicate, ledger, hash));
    }

    for (const auto& env : out.environments) {
        if (!env.extrapolation_valid) out.any_failure = true;
        for (const auto& p : env.points)
            if (p.failed) out.any_failure = true;
    }
    if (ledger) {
        json sj{{"type", "campaign_summary"},
                {"config_hash", hash},
                {"command", "campaign"},
                {"replicate", replicate},
                {"environments", out.environments.size()},
                {"any_failure", out.any_failure}};
        ledger->append(sj.dump());
    }
    return out;
}

SimulatedPoint simulate_point(const CampaignConfig& config, int env_index, int power_index,
                              int replicate) {
    config.validate();
    if (env_index < 0 || env_index >= static_cast<int>(config.environments_kelvin.size()))
        throw ConfigError("env index out of range");
    if (power_index < 0 || power_index >= static_cast<int>(config.damp_powers_watts.size()))
        throw ConfigError("point index out of range");

    CampaignConfig cfg = config;
    const double t0 = cfg.environments_kelvin[static_cast<std::size_t>(env_index)];
    cfg.device.mode.gamma0_hz = config.gamma0_at(t0);
    const Environment bath{t0};
    const double p_damp = cfg.damp_powers_watts[static_cast<std::size_t>(power_index)];

    SimulatedPoint sp;
    sp.seed = derive_seed(cfg.seeds.master, static_cast<std::uint64_t>(env_index),
                          static_cast<std::uint64_t>(power_index), replicate);
    sp.model = compose_model(cfg.device, cfg.cavity, bath, p_damp, cfg.probe_power_watts,
                             cfg.noise);
    PowerCoupling coupling = cfg.noise.coupling;
    if (coupling.damp_rate_hz_per_watt == 0)
        coupling.damp_rate_hz_per_watt = damping_coefficient(cfg.device.mode, cfg.cavity);
    sp.truth = damped_state(cfg.device.mode, cfg.cavity, bath, p_damp, cfg.probe_power_watts,
                            coupling);
    sp.stokes = synthesize_periodogram(sp.model, Window::stokes, cfg.acquisition.span_hz,
                                       cfg.acquisition.rbw_hz, cfg.acquisition.n_avg, sp.seed,
                                       cfg.acquisition.noiseless);
    sp.antistokes = synthesize_periodogram(sp.model, Window::antistokes, cfg.acquisition.span_hz,
                                           cfg.acquisition.rbw_hz, cfg.acquisition.n_avg,
                                           sp.seed, cfg.acquisition.noiseless);
    if (cfg.acquisition.tone_power > 0) {
        const SpectrumModel cal_model =
            compose_model(cfg.device, cfg.cavity, bath, cfg.damp_powers_watts.front(),
                          cfg.probe_power_watts, cfg.noise);
        const std::uint64_t cal_seed =
            derive_seed(cfg.seeds.master, static_cast<std::uint64_t>(env_index),
                        cfg.damp_powers_watts.size(), replicate);
        auto [cs, ca] = calibration_tone_pair(
            cal_model, cfg.device.mode.freq_hz + cfg.acquisition.tone_offset_hz,
            cfg.acquisition.tone_power, cfg.acquisition.span_hz, cfg.acquisition.rbw_hz,
            cfg.acquisition.n_avg, cal_seed, cfg.acquisition.noiseless);
        sp.cal_stokes = std::move(cs);
        sp.cal_antistokes = std::move(ca);
    }
    return sp;
}

BandSensitivityResult band_sensitivity(const CampaignConfig& config, int env_index,
                                       int power_index) {
    const SimulatedPoint sp = simulate_point(config, env_index, power_index);
    const AnalysisSettings settings = make_analysis_settings(config);
    ResponseRatio rho{1.0, 0.0};
    if (sp.cal_stokes && sp.cal_antistokes)
        rho = heterodyne_calibration(*sp.cal_stokes, *sp.cal_antistokes,
                                     config.device.mode.freq_hz + config.acquisition.tone_offset_hz);

    const PointAnalysis pa = analyze_point(sp.stokes, sp.antistokes, settings, rho);
    const double center = pa.peak.joint.center_mag_hz;

    BackgroundEstimate bg_s, bg_a;
    if (!settings.stokes_quiet.empty()) {
        bg_s = estimate_background(sp.stokes, settings.stokes_quiet);
        bg_a = estimate_background(sp.antistokes, settings.antistokes_quiet);
    } else {
        bg_s.level = pa.peak.joint.bg_stokes;
        bg_s.sigma = pa.peak.joint.sigma(4);
        bg_a.level = pa.peak.joint.bg_antistokes;
        bg_a.sigma = pa.peak.joint.sigma(5);
    }

    std::vector<double> offsets = config.analysis.band_offsets_hz;
    if (offsets.empty()) offsets = {-6e3, -4e3, -2e3, 0.0, 2e3, 4e3, 6e3};
    if (std::find(offsets.begin(), offsets.end(), 0.0) == offsets.end())
        offsets.push_back(0.0);
    std::sort(offsets.begin(), offsets.end());

    BandSensitivityResult out;
    double t_zero = 0;
    for (double off : offsets) {
        const RatioEstimate est =
            ratio_from_bands(sp.stokes, sp.antistokes, center + off,
                             settings.band_halfwidth_hz, bg_s, bg_a, rho);
        const ThermometryResult occ =
            occupation_and_teff(est.r_sa, est.r_sigma, center, Method::band_ratio);
        BandSensitivityRow row;
        row.offset_hz = off;
        row.r_sa = est.r_sa;
        row.n_bar_valid = occ.n_bar_valid;
        row.n_bar = occ.n_bar;
        row.t_eff_kelvin = occ.t_eff_kelvin;
        out.rows.push_back(row);
        if (off == 0.0) {
            t_zero = occ.t_eff_kelvin;
            out.stat_sigma_t = occ.t_eff_sigma;
        }
    }
    for (const auto& row : out.rows) {
        if (!row.n_bar_valid || t_zero <= 0) continue;
        out.max_abs_frac_shift =
            std::max(out.max_abs_frac_shift, std::abs(row.t_eff_kelvin - t_zero) / t_zero);
    }
    return out;
}

std::string thermometry_result_json(const ThermometryResult& result,
                                    const std::string& config_hash_hex) {
    json j = result_json(result);
    j["config_hash"] = config_hash_hex;
    return j.dump(2) + "\n";
}

namespace {

std::string csv_num(const json& v) {
    if (v.is_number()) {
        std::ostringstream ss;
        ss.precision(17);
        ss << v.get<double>();
        return ss.str();
    }
    return v.dump();
}

}  // namespace

std::vector<std::string> emit_report(const std::string& ledger_dir, const std::string& out_dir,
                                     const std::string& filter_hash) {
    const std::vector<std::string> lines = Ledger::read_records(ledger_dir);
    if (lines.empty()) throw EmptyLedger();

    std::vector<json> points, extrapolations, probe_rows, band_rows;
    for (const auto& line : lines) {
        json r = json::parse(line);
        if (!filter_hash.empty() && r.value("config_hash", "") != filter_hash) continue;
        const std::string type = r.value("type", "");
        if (type == "point" && !r.value("failed", false)) points.push_back(r);
        else if (type == "extrapolation" && r.value("valid", false)) {
            if (r.value("probe_sweep", false)) probe_rows.push_back(r);
            else extrapolations.push_back(r);
        } else if (type == "band_sensitivity_row") band_rows.push_back(r);
    }
    if (points.empty() && extrapolations.empty() && probe_rows.empty() && band_rows.empty())
        throw EmptyLedger();

    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;
    auto open_csv = [&](const std::string& name, const std::string& header) {
        std::ofstream out(out_dir + "/" + name, std::ios::binary);
        out << header << "\n";
        written.push_back(out_dir + "/" + name);
        return out;
    };

    {
        auto out = open_csv("ratio_vs_power.csv",
                            "config_hash,env_index,replicate,t0_set_kelvin,p_damp_uw,r_sa,"
                            "r_sigma,gamma_m_hz,gamma_sigma,n_bar,n_bar_sigma,n_bar_true");
        for (const auto& p : points) {
            out << p.value("config_hash", "") << "," << csv_num(p["env_index"]) << ","
                << csv_num(p["replicate"]) << "," << csv_num(p["t0_set_kelvin"]) << ","
                << csv_num(json(p["p_damp_watts"].get<double>() * 1e6)) << ","
                << csv_num(p["r_sa"]) << "," << csv_num(p["r_sigma"]) << ","
                << csv_num(p["gamma_m_hz"]) << "," << csv_num(p["gamma_sigma"]) << ","
                << csv_num(p["occupation"]["n_bar"]) << ","
                << csv_num(p["occupation"]["n_bar_sigma"]) << ","
                << csv_num(p["n_bar_true"]) << "\n";
        }
    }
    {
        auto out = open_csv("peak_heights.csv",
                            "config_hash,env_index,replicate,p_damp_uw,amp_stokes,"
                            "amp_antistokes,gamma_m_hz");
        for (const auto& p : points) {
            out << p.value("config_hash", "") << "," << csv_num(p["env_index"]) << ","
                << csv_num(p["replicate"]) << ","
                << csv_num(json(p["p_damp_watts"].get<double>() * 1e6)) << ","
                << csv_num(p["amp_stokes"]) << "," << csv_num(p["amp_antistokes"]) << ","
                << csv_num(p["gamma_m_hz"]) << "\n";
        }
    }
    {
        auto out = open_csv("temperature_comparison.csv",
                            "config_hash,env_index,replicate,t0_set_kelvin,t0_extracted_kelvin,"
                            "stat_sigma_kelvin,t0_raw_kelvin,backaction_correction_kelvin,"
                            "intercept_residual");
        for (const auto& e : extrapolations) {
            const json& res = e["result"];
            double correction = 0, intercept = 0;
            for (const auto& s : res["systematics"]) {
                if (s["name"] == "backaction_correction_kelvin") correction = s["value"];
                if (s["name"] == "heterodyne_residual") intercept = s["value"];
            }
            out << e.value("config_hash", "") << "," << csv_num(e["env_index"]) << ","
                << csv_num(e["replicate"]) << "," << csv_num(e["t0_set_kelvin"]) << ","
                << csv_num(res["t0_kelvin"]) << "," << csv_num(res["stat_sigma"]) << ","
                << csv_num(e["t0_raw_kelvin"]) << "," << csv_num(json(correction)) << ","
                << csv_num(json(intercept)) << "\n";
        }
    }
    if (!probe_rows.empty()) {
        auto out = open_csv("probe_power_sweep.csv",
                            "config_hash,replicate,probe_power_uw,t0_set_kelvin,"
                            "t0_extracted_kelvin,stat_sigma_kelvin");
        for (const auto& e : probe_rows) {
            out << e.value("config_hash", "") << "," << csv_num(e["replicate"]) << ","
                << csv_num(json(e["probe_power_watts"].get<double>() * 1e6)) << ","
                << csv_num(e["t0_set_kelvin"]) << "," << csv_num(e["result"]["t0_kelvin"]) << ","
                << csv_num(e["result"]["stat_sigma"]) << "\n";
        }
    }
    if (!band_rows.empty()) {
        auto out = open_csv("band_sensitivity.csv",
                            "config_hash,offset_hz,r_sa,n_bar,t_eff_kelvin,n_bar_valid");
        for (const auto& b : band_rows) {
            out << b.value("config_hash", "") << "," << csv_num(b["offset_hz"]) << ","
                << csv_num(b["r_sa"]) << "," << csv_num(b["n_bar"]) << ","
                << csv_num(b["t_eff_kelvin"]) << "," << (b["n_bar_valid"].get<bool>() ? 1 : 0)
                << "\n";
        }
    }
    return written;
}

}  // namespace rrt
