#include "rrt/spectrum.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rrt/errors.hpp"
#include "rrt/rng.hpp"

namespace rrt {

void SpectrumModel::validate() const {
    if (!(gain > 0)) throw ConfigError("model.gain must be > 0");
    if (std::abs(beta_stokes) > 0.05 || std::abs(beta_antistokes) > 0.05)
        throw ConfigError("model.classical_bias: |beta| must be <= 0.05");
    if (!(primary.gamma_hz > 0)) throw ConfigError("model.primary.gamma_hz must be > 0");
    for (const auto& s : spectators)
        if (!(s.gamma_hz > 0)) throw ConfigError("model.spectator.gamma_hz must be > 0");
    for (const auto& s : substrate)
        if (!(s.gamma_hz > 0)) throw ConfigError("model.substrate.gamma_hz must be > 0");
}

std::string window_name(Window w) {
    switch (w) {
        case Window::stokes: return "stokes";
        case Window::antistokes: return "antistokes";
        default: return "calibration";
    }
}

bool is_stokes_side(Window w) {
    return w == Window::stokes || w == Window::calibration_stokes;
}

double lorentzian_peak(double freq_hz, double center_hz, double gamma_hz) {
    const double hw = 0.5 * gamma_hz;
    const double d = freq_hz - center_hz;
    return hw * hw / (hw * hw + d * d);
}

namespace {

// Both Raman sidebands of one mode. Substrate terms use |f| instead so that
// the two windows see bit-identical values.
double mode_pair(double f, const ModeTerm& m, double beta_s, double beta_as) {
    const double anti = (1.0 + beta_as) * m.n_bar * lorentzian_peak(f, m.center_hz, m.gamma_hz);
    const double stokes =
        (1.0 + beta_s) * (m.n_bar + 1.0) * lorentzian_peak(f, -m.center_hz, m.gamma_hz);
    return m.response_weight * m.zp_scale * (anti + stokes);
}

}  // namespace

double ideal_psd(double freq_hz, const SpectrumModel& model) {
    double s = mode_pair(freq_hz, model.primary, model.beta_stokes, model.beta_antistokes);
    for (const auto& sp : model.spectators) s += mode_pair(freq_hz, sp, 0.0, 0.0);
    const double af = std::abs(freq_hz);
    for (const auto& line : model.substrate)
        s += line.amplitude * lorentzian_peak(af, line.center_hz, line.gamma_hz);
    s += model.white_background;
    return model.gain * (model.response.eval(freq_hz) * s);
}

double spectator_response_suppression(double g0_ratio, double gamma_primary_hz,
                                      double gamma_spectator_hz, double offset_hz) {
    const double hw_p = 0.5 * gamma_primary_hz;
    const double hw_s = 0.5 * gamma_spectator_hz;
    return (hw_s * hw_s + offset_hz * offset_hz) / (g0_ratio * g0_ratio * hw_p * hw_p);
}

SpectrumModel compose_model(const Device& device, const CavityParams& cavity,
                            const Environment& env, double p_damp_watts,
                            double p_probe_watts, const NoiseConfig& noise) {
    PowerCoupling coupling = noise.coupling;
    if (coupling.damp_rate_hz_per_watt == 0)
        coupling.damp_rate_hz_per_watt = damping_coefficient(device.mode, cavity);

    const DampedState st =
        damped_state(device.mode, cavity, env, p_damp_watts, p_probe_watts, coupling);

    SpectrumModel model;
    model.zp_ref_gamma_hz =
        noise.zp_ref_gamma_hz > 0 ? noise.zp_ref_gamma_hz : st.gamma_m_hz;

    model.primary.center_hz = device.mode.freq_hz;
    model.primary.gamma_hz = st.gamma_m_hz;
    model.primary.n_bar = st.n_bar;
    model.primary.response_weight = 1.0;
    {
        const double r = model.zp_ref_gamma_hz / st.gamma_m_hz;
        model.primary.zp_scale = r * r;
    }

    if (device.spectator.enabled) {
        const SpectatorConfig& sc = device.spectator;
        const double w = sc.g0_ratio * sc.g0_ratio;
        MechMode spec_mode = device.mode;
        spec_mode.label = {device.mode.label[1], device.mode.label[0]};
        spec_mode.freq_hz = device.mode.freq_hz + sc.offset_hz;
        spec_mode.gamma0_hz = sc.gamma0_hz > 0 ? sc.gamma0_hz : device.mode.gamma0_hz;
        // The spectator sees the same beams through a weaker coupling, so
        // both its optical damping and its backaction scale by g0_ratio^2.
        PowerCoupling spec_coupling{coupling.damp_rate_hz_per_watt * w,
                                    coupling.qba_rate_hz_per_watt * w};
        const DampedState sp =
            damped_state(spec_mode, cavity, env, p_damp_watts, p_probe_watts, spec_coupling);

        const double suppression = spectator_response_suppression(
            sc.g0_ratio, st.gamma_m_hz, sp.gamma_m_hz, sc.offset_hz);
        if (suppression <= 10.0)
            throw RegimeViolation(
                "spectator response suppression " + std::to_string(suppression) +
                " <= 10: optical damping strong enough for mode hybridization");

        ModeTerm term;
        term.center_hz = spec_mode.freq_hz;
        term.gamma_hz = sp.gamma_m_hz;
        term.n_bar = sp.n_bar;
        term.response_weight = w;
        const double r = model.zp_ref_gamma_hz / sp.gamma_m_hz;
        term.zp_scale = r * r;
        model.spectators.push_back(term);
    }

    model.substrate = noise.substrate;
    model.white_background = noise.white_background;
    model.beta_stokes = noise.beta_stokes;
    model.beta_antistokes = noise.beta_antistokes;
    model.response.coeff = noise.het_response;
    model.response.ref_freq_hz = device.mode.freq_hz;
    model.gain = noise.gain;
    model.validate();
    return model;
}

namespace {

std::uint32_t window_rng_id(Window w) { return static_cast<std::uint32_t>(w); }

}  // namespace

Periodogram synthesize_periodogram(const SpectrumModel& model, Window window,
                                   double span_hz, double rbw_hz, double n_avg,
                                   std::uint64_t seed, bool noiseless) {
    if (!(rbw_hz > 0)) throw ConfigError("acquisition.rbw_hz must be > 0");
    if (!(span_hz >= 2 * rbw_hz)) throw ConfigError("acquisition.span_hz must cover the window");
    if (!(n_avg >= 1)) throw ConfigError("acquisition.n_avg must be >= 1");
    model.validate();

    const double center =
        is_stokes_side(window) ? -model.primary.center_hz : model.primary.center_hz;
    const long half = static_cast<long>(std::floor(span_hz / (2.0 * rbw_hz)));

    Periodogram pg;
    pg.window = window;
    pg.rbw_hz = rbw_hz;
    pg.n_avg = n_avg;
    pg.seed = seed;
    pg.freqs_hz.reserve(2 * half + 1);
    pg.values.reserve(2 * half + 1);

    const std::uint32_t wid = window_rng_id(window);
    for (long k = -half; k <= half; ++k) {
        const double f = center + static_cast<double>(k) * rbw_hz;
        if (model.response.eval(f) <= 0)
            throw ConfigError("het_response must stay positive over the analysis window");
        const double ideal = ideal_psd(f, model);
        double v = ideal;
        if (!noiseless) {
            CounterStream stream(seed, wid, static_cast<std::uint64_t>(k + half));
            v = ideal * averaged_periodogram_noise(stream, n_avg);
        }
        pg.freqs_hz.push_back(f);
        pg.values.push_back(v);
    }
    return pg;
}

std::pair<Periodogram, Periodogram> calibration_tone_pair(
    const SpectrumModel& model, double tone_freq_hz, double tone_power,
    double span_hz, double rbw_hz, double n_avg, std::uint64_t seed, bool noiseless) {
    if (!(tone_power > 0)) throw ConfigError("calibration.tone_power must be > 0");
    const double lo = model.primary.center_hz - span_hz / 2;
    const double hi = model.primary.center_hz + span_hz / 2;
    if (!(tone_freq_hz > lo && tone_freq_hz < hi))
        throw ConfigError("calibration tone must lie inside the analysis windows");

    Periodogram s = synthesize_periodogram(model, Window::calibration_stokes, span_hz,
                                           rbw_hz, n_avg, seed, noiseless);
    Periodogram a = synthesize_periodogram(model, Window::calibration_antistokes, span_hz,
                                           rbw_hz, n_avg, seed, noiseless);

    // Tones are coherent: they land in a single bin, scaled by the detection
    // response exactly like the physical sidebands. The residual fluctuation
    // comes from the noise realized under the tone bin.
    auto add_tone = [&](Periodogram& pg, double f_tone) {
        std::size_t best = 0;
        double bd = std::abs(pg.freqs_hz[0] - f_tone);
        for (std::size_t i = 1; i < pg.freqs_hz.size(); ++i) {
            const double d = std::abs(pg.freqs_hz[i] - f_tone);
            if (d < bd) {
                bd = d;
                best = i;
            }
        }
        pg.values[best] += model.gain * model.response.eval(pg.freqs_hz[best]) *
                           tone_power / pg.rbw_hz;
    };
    add_tone(s, -tone_freq_hz);
    add_tone(a, tone_freq_hz);
    return {std::move(s), std::move(a)};
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

}  // namespace

void write_periodogram_csv(const std::string& path, const Periodogram& pg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << "freq_hz,psd,rbw_hz,n_avg,window,seed\n";
    const std::string tail = "," + fmt_double(pg.rbw_hz) + "," + fmt_double(pg.n_avg) + "," +
                             window_name(pg.window) + "," + std::to_string(pg.seed) + "\n";
    for (std::size_t i = 0; i < pg.freqs_hz.size(); ++i)
        out << fmt_double(pg.freqs_hz[i]) << "," << fmt_double(pg.values[i]) << tail;
}

Periodogram read_periodogram_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string line;
    long lineno = 0;
    if (!std::getline(in, line)) throw ParseError(path, 1, "empty file");
    ++lineno;
    if (line != "freq_hz,psd,rbw_hz,n_avg,window,seed")
        throw ParseError(path, lineno, "unexpected header: " + line);

    Periodogram pg;
    bool first = true;
    std::string window_label;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::array<std::string, 6> field;
        std::size_t start = 0;
        int nf = 0;
        for (; nf < 6; ++nf) {
            const std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                field[nf] = line.substr(start);
                ++nf;
                break;
            }
            field[nf] = line.substr(start, comma - start);
            start = comma + 1;
        }
        if (nf != 6) throw ParseError(path, lineno, "expected 6 fields, got " + std::to_string(nf));

        auto parse_num = [&](const std::string& s, const char* what) {
            double v{};
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size())
                throw ParseError(path, lineno, std::string("bad ") + what + ": '" + s + "'");
            return v;
        };
        const double f = parse_num(field[0], "freq_hz");
        const double v = parse_num(field[1], "psd");
        const double rbw = parse_num(field[2], "rbw_hz");
        const double n_avg = parse_num(field[3], "n_avg");
        std::uint64_t seed{};
        {
            auto [p, ec] = std::from_chars(field[5].data(), field[5].data() + field[5].size(), seed);
            if (ec != std::errc{} || p != field[5].data() + field[5].size())
                throw ParseError(path, lineno, "bad seed: '" + field[5] + "'");
        }
        if (first) {
            pg.rbw_hz = rbw;
            pg.n_avg = n_avg;
            pg.seed = seed;
            window_label = field[4];
            first = false;
        } else if (rbw != pg.rbw_hz || n_avg != pg.n_avg || field[4] != window_label) {
            throw ParseError(path, lineno, "metadata changed mid-file");
        }
        pg.freqs_hz.push_back(f);
        pg.values.push_back(v);
    }
    if (pg.freqs_hz.empty()) throw ParseError(path, lineno, "no data rows");

    const bool negative = pg.freqs_hz.front() < 0;
    if (window_label == "stokes") pg.window = Window::stokes;
    else if (window_label == "antistokes") pg.window = Window::antistokes;
    else if (window_label == "calibration")
        pg.window = negative ? Window::calibration_stokes : Window::calibration_antistokes;
    else throw ParseError(path, 2, "unknown window label: " + window_label);

    for (std::size_t i = 1; i < pg.freqs_hz.size(); ++i) {
        const double step = pg.freqs_hz[i] - pg.freqs_hz[i - 1];
        if (std::abs(step - pg.rbw_hz) > 1e-6 * pg.rbw_hz)
            throw ParseError(path, static_cast<long>(i) + 2, "bin spacing != rbw_hz");
    }
    return pg;
}

}  // namespace rrt
