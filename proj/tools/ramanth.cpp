#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "rrt/campaign.hpp"
#include "rrt/errors.hpp"

using nlohmann::json;

namespace {

struct ConfigArgs {
    std::string config_path;
    std::string preset_name;
    std::optional<std::uint64_t> seed_override;

    rrt::CampaignConfig resolve() const {
        if (config_path.empty() && preset_name.empty())
            throw rrt::ConfigError("provide --config PATH or --preset NAME");
        rrt::CampaignConfig cfg = config_path.empty() ? rrt::preset(preset_name)
                                                      : rrt::load_config_file(config_path);
        if (seed_override) {
            cfg.seeds.master = *seed_override;
            cfg.seeds.master_set = true;
        }
        return cfg;
    }
};

void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_path, "campaign config JSON");
    cmd->add_option("--preset", args.preset_name, "named preset configuration");
    auto* seed = cmd->add_option_group("seed");
    std::uint64_t* slot = new std::uint64_t(0);
    seed->add_option_function<std::uint64_t>(
        "--seed", [&args](std::uint64_t v) { args.seed_override = v; },
        "override the master seed");
    (void)slot;
}

int cmd_simulate(const ConfigArgs& cargs, const std::string& out, int env, int point) {
    const rrt::CampaignConfig cfg = cargs.resolve();
    std::filesystem::create_directories(out);
    const rrt::SimulatedPoint sp = rrt::simulate_point(cfg, env, point);
    rrt::write_periodogram_csv(out + "/stokes.csv", sp.stokes);
    rrt::write_periodogram_csv(out + "/antistokes.csv", sp.antistokes);
    if (sp.cal_stokes) {
        rrt::write_periodogram_csv(out + "/cal_stokes.csv", *sp.cal_stokes);
        rrt::write_periodogram_csv(out + "/cal_antistokes.csv", *sp.cal_antistokes);
    }
    json sidecar{{"config_hash", rrt::config_hash(cfg)},
                 {"env_index", env},
                 {"power_index", point},
                 {"seed", sp.seed},
                 {"t0_set_kelvin", cfg.environments_kelvin[static_cast<std::size_t>(env)]},
                 {"p_damp_watts", cfg.damp_powers_watts[static_cast<std::size_t>(point)]},
                 {"truth",
                  {{"n_bar", sp.truth.n_bar},
                   {"n_th_damped", sp.truth.n_th_damped},
                   {"n_ba", sp.truth.n_ba},
                   {"gamma_m_hz", sp.truth.gamma_m_hz}}},
                 {"model",
                  {{"primary_center_hz", sp.model.primary.center_hz},
                   {"primary_gamma_hz", sp.model.primary.gamma_hz},
                   {"primary_n_bar", sp.model.primary.n_bar},
                   {"gain", sp.model.gain},
                   {"white_background", sp.model.white_background},
                   {"zp_ref_gamma_hz", sp.model.zp_ref_gamma_hz}}}};
    std::ofstream side(out + "/model.json", std::ios::binary);
    side << sidecar.dump(2) << "\n";
    std::printf("wrote %s/{stokes,antistokes}.csv (seed %llu)\n", out.c_str(),
                static_cast<unsigned long long>(sp.seed));
    return 0;
}

int cmd_analyze(const ConfigArgs& cargs, const std::string& stokes_path,
                const std::string& antistokes_path, const std::string& cal_stokes_path,
                const std::string& cal_antistokes_path, bool require_cal,
                const std::string& out) {
    const bool has_cal = !cal_stokes_path.empty() && !cal_antistokes_path.empty();
    if (require_cal && !has_cal)
        throw rrt::ConfigError("--require-cal set but no calibration files were given");

    const rrt::Periodogram stokes = rrt::read_periodogram_csv(stokes_path);
    const rrt::Periodogram antistokes = rrt::read_periodogram_csv(antistokes_path);

    rrt::AnalysisSettings settings;
    std::string hash;
    double tone_freq = 0;
    const bool have_config = !cargs.config_path.empty() || !cargs.preset_name.empty();
    if (have_config) {
        const rrt::CampaignConfig cfg = cargs.resolve();
        settings = rrt::make_analysis_settings(cfg);
        hash = rrt::config_hash(cfg);
        tone_freq = cfg.device.mode.freq_hz + cfg.acquisition.tone_offset_hz;
    } else {
        settings = rrt::default_analysis_settings(stokes, antistokes);
    }

    rrt::ResponseRatio rho{1.0, 0.0};
    if (has_cal) {
        const rrt::Periodogram cs = rrt::read_periodogram_csv(cal_stokes_path);
        const rrt::Periodogram ca = rrt::read_periodogram_csv(cal_antistokes_path);
        if (tone_freq == 0) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < ca.values.size(); ++i)
                if (ca.values[i] > ca.values[best]) best = i;
            tone_freq = ca.freqs_hz[best];
        }
        rho = rrt::heterodyne_calibration(cs, ca, tone_freq);
    }

    const rrt::PointAnalysis pa = rrt::analyze_point(stokes, antistokes, settings, rho);

    std::filesystem::create_directories(out);
    json doc{{"config_hash", hash},
             {"rho", rho.rho},
             {"rho_sigma", rho.sigma},
             {"inputs", {{"stokes", stokes_path}, {"antistokes", antistokes_path}}},
             {"joint_fit",
              {{"amp_stokes", pa.peak.joint.amp_stokes},
               {"amp_antistokes", pa.peak.joint.amp_antistokes},
               {"center_mag_hz", pa.peak.joint.center_mag_hz},
               {"gamma_hz", pa.peak.joint.gamma_hz},
               {"converged", pa.peak.joint.converged},
               {"resolution_warning", pa.peak.joint.resolution_warning}}},
             {"peak_ratio", {{"r_sa", pa.peak.r_sa}, {"r_sigma", pa.peak.r_sigma}}},
             {"result", json::parse(rrt::thermometry_result_json(pa.occupation, hash))}};
    if (pa.band_valid)
        doc["band_ratio"] = {{"r_sa", pa.band.r_sa}, {"r_sigma", pa.band.r_sigma}};
    std::ofstream res(out + "/result.json", std::ios::binary);
    res << doc.dump(2) << "\n";

    rrt::Ledger ledger(out);
    json rec{{"type", "analysis"},
             {"config_hash", hash},
             {"command", "analyze"},
             {"seed", stokes.seed},
             {"r_sa", pa.occupation.r_sa},
             {"r_sigma", pa.occupation.r_sigma},
             {"method", rrt::method_name(pa.occupation.method)},
             {"n_bar_valid", pa.occupation.n_bar_valid},
             {"n_bar", pa.occupation.n_bar},
             {"n_bar_sigma", pa.occupation.n_bar_sigma}};
    ledger.append(rec.dump());

    if (pa.occupation.n_bar_valid)
        std::printf("n_bar = %.6g +- %.3g (%s), T_eff = %.6g K\n", pa.occupation.n_bar,
                    pa.occupation.n_bar_sigma, rrt::method_name(pa.occupation.method).c_str(),
                    pa.occupation.t_eff_kelvin);
    else
        std::printf("ratio %.6g +- %.3g is consistent with an unbounded occupation\n",
                    pa.occupation.r_sa, pa.occupation.r_sigma);
    return 0;
}

int cmd_campaign(const ConfigArgs& cargs, const std::string& out) {
    const rrt::CampaignConfig cfg = cargs.resolve();
    rrt::Ledger ledger(out);
    bool any_failure = false;
    for (int rep = 0; rep < cfg.seeds.ensemble; ++rep) {
        const rrt::CampaignOutcome outcome = rrt::run_campaign(cfg, &ledger, rep);
        any_failure = any_failure || outcome.any_failure;
        for (const auto& env : outcome.environments) {
            if (env.extrapolation_valid) {
                std::printf(
                    "T0 set %7.3f K  ->  extracted %8.4f +- %7.4f K   (P_p %5.1f uW%s)\n",
                    env.t0_set_kelvin, env.extrapolation.t0_kelvin,
                    env.extrapolation.stat_sigma, env.probe_power_watts * 1e6,
                    cfg.seeds.ensemble > 1 ? (", rep " + std::to_string(rep)).c_str() : "");
            } else {
                std::printf("T0 set %7.3f K  ->  extrapolation failed: %s\n",
                            env.t0_set_kelvin, env.error.c_str());
            }
            for (const auto& p : env.points)
                if (p.failed)
                    std::printf("  point P_d = %.3g uW failed: %s\n", p.p_damp_watts * 1e6,
                                p.error.c_str());
        }
    }
    std::printf("ledger: %s/ledger.jsonl\n", out.c_str());
    return any_failure ? 4 : 0;
}

int cmd_calibrate(const ConfigArgs& cargs, const std::string& out) {
    const rrt::CampaignConfig cfg = cargs.resolve();
    if (!(cfg.acquisition.tone_power > 0))
        throw rrt::ConfigError("acquisition.tone_power must be > 0 to calibrate");
    const rrt::SimulatedPoint sp = rrt::simulate_point(cfg, 0, 0);
    std::filesystem::create_directories(out);
    rrt::write_periodogram_csv(out + "/cal_stokes.csv", *sp.cal_stokes);
    rrt::write_periodogram_csv(out + "/cal_antistokes.csv", *sp.cal_antistokes);
    const double tone_freq = cfg.device.mode.freq_hz + cfg.acquisition.tone_offset_hz;
    const rrt::ResponseRatio rho =
        rrt::heterodyne_calibration(*sp.cal_stokes, *sp.cal_antistokes, tone_freq);
    json doc{{"config_hash", rrt::config_hash(cfg)},
             {"tone_freq_hz", tone_freq},
             {"rho", rho.rho},
             {"rho_sigma", rho.sigma}};
    std::ofstream res(out + "/calibration.json", std::ios::binary);
    res << doc.dump(2) << "\n";
    std::printf("heterodyne response ratio rho = %.6f +- %.2g\n", rho.rho, rho.sigma);
    return 0;
}

int cmd_band_sensitivity(const ConfigArgs& cargs, const std::string& out, int env, int point) {
    const rrt::CampaignConfig cfg = cargs.resolve();
    const int pi = point >= 0 ? point : static_cast<int>(cfg.damp_powers_watts.size()) - 1;
    const rrt::BandSensitivityResult res = rrt::band_sensitivity(cfg, env, pi);
    rrt::Ledger ledger(out);
    const std::string hash = rrt::config_hash(cfg);
    std::printf("offset_hz, r_sa, n_bar, t_eff_K\n");
    for (const auto& row : res.rows) {
        json rec{{"type", "band_sensitivity_row"}, {"config_hash", hash},
                 {"command", "band-sensitivity"}, {"env_index", env},
                 {"power_index", pi},           {"offset_hz", row.offset_hz},
                 {"r_sa", row.r_sa},            {"n_bar", row.n_bar},
                 {"t_eff_kelvin", row.t_eff_kelvin}, {"n_bar_valid", row.n_bar_valid}};
        ledger.append(rec.dump());
        std::printf("%8.0f, %.5f, %s, %s\n", row.offset_hz, row.r_sa,
                    row.n_bar_valid ? std::to_string(row.n_bar).c_str() : "n/a",
                    row.n_bar_valid ? std::to_string(row.t_eff_kelvin).c_str() : "n/a");
    }
    std::printf("max |dT|/T over sweep: %.3f; statistical sigma at zero offset: %.3g K\n",
                res.max_abs_frac_shift, res.stat_sigma_t);
    return 0;
}

int cmd_report(const std::string& ledger_dir, const std::string& out,
               const std::string& filter_hash) {
    const auto files = rrt::emit_report(ledger_dir, out, filter_hash);
    for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sideband-asymmetry thermometry simulator and analysis toolkit"};
    app.require_subcommand(1);
    bool serial = false;
    app.add_flag("--serial", serial,
                 "force serial execution (execution is serial and deterministic regardless)");

    ConfigArgs sim_args, ana_args, camp_args, cal_args, band_args;
    std::string out_dir = ".";
    int env_index = 0, point_index = -1;

    auto* sim = app.add_subcommand("simulate", "synthesize periodograms for one sweep point");
    add_config_flags(sim, sim_args);
    sim->add_option("--out", out_dir, "output directory");
    sim->add_option("--env", env_index, "environment index");
    sim->add_option("--point", point_index, "damping-power index");

    std::string stokes_path, antistokes_path, cal_s_path, cal_a_path;
    bool require_cal = false;
    auto* ana = app.add_subcommand("analyze", "recover occupation from periodogram files");
    add_config_flags(ana, ana_args);
    ana->add_option("--stokes", stokes_path, "Stokes-window CSV")->required();
    ana->add_option("--antistokes", antistokes_path, "anti-Stokes-window CSV")->required();
    ana->add_option("--cal-stokes", cal_s_path, "calibration CSV, Stokes side");
    ana->add_option("--cal-antistokes", cal_a_path, "calibration CSV, anti-Stokes side");
    ana->add_flag("--require-cal", require_cal, "fail unless a calibration pair is given");
    ana->add_option("--out", out_dir, "output directory");

    auto* camp = app.add_subcommand("campaign", "run the full configured sweep");
    add_config_flags(camp, camp_args);
    camp->add_option("--out", out_dir, "output directory for the ledger");

    auto* cal = app.add_subcommand("calibrate", "measure the heterodyne response ratio");
    add_config_flags(cal, cal_args);
    cal->add_option("--out", out_dir, "output directory");

    auto* band = app.add_subcommand("band-sensitivity",
                                    "inferred temperature vs band-center offset");
    add_config_flags(band, band_args);
    band->add_option("--out", out_dir, "output directory");
    band->add_option("--env", env_index, "environment index");
    band->add_option("--point", point_index, "damping-power index (default: strongest)");

    std::string ledger_dir, filter_hash;
    auto* rep = app.add_subcommand("report", "emit plot-ready CSV datasets from a ledger");
    rep->add_option("--ledger", ledger_dir, "ledger directory")->required();
    rep->add_option("--out", out_dir, "output directory");
    rep->add_option("--config-hash", filter_hash, "only records with this config hash");

    try {
        app.parse(argc, argv);
        if (sim->parsed())
            return cmd_simulate(sim_args, out_dir, env_index,
                                point_index < 0 ? 0 : point_index);
        if (ana->parsed())
            return cmd_analyze(ana_args, stokes_path, antistokes_path, cal_s_path, cal_a_path,
                               require_cal, out_dir);
        if (camp->parsed()) return cmd_campaign(camp_args, out_dir);
        if (cal->parsed()) return cmd_calibrate(cal_args, out_dir);
        if (band->parsed()) return cmd_band_sensitivity(band_args, out_dir, env_index, point_index);
        if (rep->parsed()) return cmd_report(ledger_dir, out_dir, filter_hash);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const rrt::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const rrt::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 2;
}
