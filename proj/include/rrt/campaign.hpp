#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rrt/spectrum.hpp"
#include "rrt/thermometry.hpp"

namespace rrt {

struct AcquisitionConfig {
    double rbw_hz = 100.0;
    double span_hz = 0;      // full width of each analysis window
    double n_avg = 400;
    bool noiseless = false;
    double tone_power = 0;        // model units * Hz; 0 disables tone synthesis
    double tone_offset_hz = 0;    // tone sits at nu_m + offset
};

/// Analysis geometry, expressed as offsets from the nominal resonance so one
/// set of numbers serves both mirrored windows.
struct AnalysisConfig {
    double fit_rel_lo_hz = 0;   // fit window [nu_m + lo, nu_m + hi] in |freq|
    double fit_rel_hi_hz = 0;   // 0/0 -> full synthesized span
    std::vector<std::pair<double, double>> exclusions_rel_hz;
    std::vector<std::pair<double, double>> quiet_regions_rel_hz;
    double band_halfwidth_hz = 2000.0;
    std::vector<double> band_offsets_hz;  // band-sensitivity sweep
    Method method = Method::peak_ratio;
};

struct SeedConfig {
    std::uint64_t master = 0;
    bool master_set = false;  // configs must seed explicitly, never wall clock
    int ensemble = 1;
};

struct CampaignConfig {
    int schema_version = 1;
    std::string description;
    Device device;
    std::map<double, double> gamma0_hz_by_t;  // per-temperature intrinsic linewidth
    CavityParams cavity;
    std::vector<double> environments_kelvin;
    double probe_power_watts = 0;
    std::vector<double> probe_power_sweep_watts;  // optional extra sweep
    std::vector<double> damp_powers_watts;
    NoiseConfig noise;                 // substrate centers already absolute
    AcquisitionConfig acquisition;
    AnalysisConfig analysis;
    SeedConfig seeds;

    void validate() const;
    double gamma0_at(double t_kelvin) const;
};

CampaignConfig parse_config(const std::string& json_text);
std::string serialize_config(const CampaignConfig& config);
CampaignConfig load_config_file(const std::string& path);

/// FNV-1a over the canonical serialized form.
std::string config_hash(const CampaignConfig& config);

/// Shipped operating points. Names: groundstate-sweep, temperature-extrapolation,
/// spectator-pair, probe-power-sweep.
std::vector<std::string> preset_names();
CampaignConfig preset(const std::string& name);

/// Resolved fit/band geometry for one device.
struct AnalysisSettings {
    FitWindow stokes_window;
    FitWindow antistokes_window;
    std::vector<std::pair<double, double>> stokes_quiet;
    std::vector<std::pair<double, double>> antistokes_quiet;
    double band_halfwidth_hz = 2000.0;
    Method method = Method::peak_ratio;
    FitOptions fit_options;
};

AnalysisSettings make_analysis_settings(const CampaignConfig& config);
/// Fallback when only spectra files are available: full-span windows.
AnalysisSettings default_analysis_settings(const Periodogram& stokes,
                                           const Periodogram& antistokes);

/// Everything extracted from one operating point.
struct PointAnalysis {
    LorentzianFit stokes_fit;
    LorentzianFit antistokes_fit;
    RatioEstimate peak;             // joint-refit peak ratio (calibrated)
    bool band_valid = false;
    RatioEstimate band;             // band-integral ratio (calibrated)
    ThermometryResult occupation;   // via the configured method
    ResponseRatio rho;
};

PointAnalysis analyze_point(const Periodogram& stokes, const Periodogram& antistokes,
                            const AnalysisSettings& settings, const ResponseRatio& rho,
                            double freq_hint_hz = 0);

struct PointRecord {
    int env_index = 0;
    int power_index = 0;
    int replicate = 0;
    double t0_set_kelvin = 0;
    double p_damp_watts = 0;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    // truth from the composed model
    double n_bar_true = 0;
    double gamma_true_hz = 0;
    // measured
    double amp_stokes = 0;
    double amp_antistokes = 0;
    RatioPoint ratio_point;
    ThermometryResult occupation;
};

struct EnvironmentResult {
    int env_index = 0;
    int replicate = 0;
    double t0_set_kelvin = 0;
    double probe_power_watts = 0;
    ResponseRatio rho;
    std::vector<PointRecord> points;
    bool extrapolation_valid = false;
    std::string error;
    double t0_raw_kelvin = 0;
    ThermometryResult extrapolation;  // backaction-corrected
};

struct CampaignOutcome {
    std::vector<EnvironmentResult> environments;  // env-major, replicate-minor
    bool any_failure = false;
};

/// Append-only results store: pure records in ledger.jsonl, wall-clock
/// metadata kept apart in ledger.meta.jsonl so record bytes stay
/// deterministic. The config snapshot is written once per hash.
class Ledger {
public:
    explicit Ledger(std::string directory);
    void record_config(const CampaignConfig& config);
    void append(const std::string& record_json_line);
    std::string path() const;
    static std::vector<std::string> read_records(const std::string& directory);

private:
    std::string dir_;
};

/// Run one replicate of the configured sweep over every environment.
CampaignOutcome run_campaign(const CampaignConfig& config, Ledger* ledger = nullptr,
                             int replicate = 0);

/// Synthesize the two windows (plus optional calibration pair) for one point.
struct SimulatedPoint {
    Periodogram stokes;
    Periodogram antistokes;
    std::optional<Periodogram> cal_stokes;
    std::optional<Periodogram> cal_antistokes;
    SpectrumModel model;
    DampedState truth;
    std::uint64_t seed = 0;
};

SimulatedPoint simulate_point(const CampaignConfig& config, int env_index, int power_index,
                              int replicate = 0);

/// Inferred temperature versus band-center offset at one operating point.
struct BandSensitivityRow {
    double offset_hz = 0;
    double r_sa = 0;
    double n_bar = 0;
    double t_eff_kelvin = 0;
    bool n_bar_valid = false;
};

struct BandSensitivityResult {
    std::vector<BandSensitivityRow> rows;
    double stat_sigma_t = 0;     // statistical sigma of the zero-offset point
    double max_abs_frac_shift = 0;  // max |T(off) - T(0)| / T(0)
};

BandSensitivityResult band_sensitivity(const CampaignConfig& config, int env_index,
                                       int power_index);

/// JSON document for one thermometry result (systematics itemized, inputs
/// echoed).
std::string thermometry_result_json(const ThermometryResult& result,
                                    const std::string& config_hash_hex);

/// Emit plot-ready CSV datasets from a ledger (ratio vs power, temperature
/// comparison, peak heights, plus probe-sweep and band-sensitivity tables
/// when such records exist). Deterministic, so re-running is idempotent.
/// Returns the files written. Throws EmptyLedger when nothing matches.
std::vector<std::string> emit_report(const std::string& ledger_dir, const std::string& out_dir,
                                     const std::string& filter_hash = "");

}  // namespace rrt
