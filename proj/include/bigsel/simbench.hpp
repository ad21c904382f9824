#ifndef BIGSEL_SIMBENCH_HPP
#define BIGSEL_SIMBENCH_HPP

// Synthetic linear-Gaussian data, Monte Carlo evaluation of selection error
// rates across signal-to-noise levels, and time/RAM/disk scaling benchmarks
// of the selection pipelines.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bigsel/matstore.hpp"
#include "bigsel/trex.hpp"

namespace bigsel {

struct SimConfig {
    std::size_t n = 0;
    std::size_t p = 0;
    std::size_t p1 = 10;   // true active variables
    double coeff = 1.0;    // shared active coefficient value
    double snr = 1.0;      // Var[X beta] / sigma^2
    std::uint64_t seed = 0;
    std::size_t trials = 1;
};

struct Dataset {
    StoredMatrix X;                    // standardized, file-backed
    std::vector<double> y;             // centered response
    std::vector<std::uint32_t> truth;  // support of beta
    double noise_sd = 0.0;             // realized sigma, for provenance
};

// Draws X with i.i.d. standard-normal entries, standardizes its columns,
// places `coeff` on the first p1 coefficients, scales the noise so the
// realized Var[X beta] / sigma^2 equals `snr`, and centers y.
Dataset gen_dataset(const SimConfig& cfg, const std::filesystem::path& x_path,
                    bool overwrite = false);

struct TrialMetrics {
    double fdp = 0.0;  // |selected \ truth| / max(1, |selected|)
    double tpp = 0.0;  // |selected & truth| / max(1, |truth|)
    double wall_seconds = 0.0;
    std::uint64_t cum_alloc_bytes = 0;
    std::uint64_t peak_rss_bytes = 0;
    std::uint64_t disk_bytes = 0;
};

TrialMetrics trial_metrics(std::span<const std::uint32_t> selected,
                           std::span<const std::uint32_t> truth);

// --- pipeline variants -------------------------------------------------------

enum class PipelineVariant {
    Reference,  // dense in-memory baseline, fresh dummies
    Fresh,      // out-of-core, fresh dummy matrices per experiment
    DpS1,       // out-of-core, permuted reference, strategy S1
    DpS2,       // out-of-core, permuted reference, strategy S2
};

const char* variant_name(PipelineVariant v);
PipelineVariant variant_from_name(const std::string& name);

// Runs one full calibration with the given variant. `cfg.strategy` is set
// from the variant; the reference variant runs entirely in RAM.
SelectionResult run_pipeline(PipelineVariant variant,
                             const std::filesystem::path& x_path,
                             std::span<const double> y_centered, TRexConfig cfg,
                             bool resume = false);

// --- Monte Carlo -------------------------------------------------------------

struct MonteCarloConfig {
    SimConfig sim;                  // snr field ignored; snr_list drives it
    std::vector<double> snr_list;
    std::vector<PipelineVariant> variants;
    double alpha = 0.1;
    std::size_t K = 20;
    std::size_t L = 0;              // 0: L = p
    std::size_t T_max = 0;
    std::size_t jobs = 1;
    std::filesystem::path outdir;   // mc_trials.csv, mc_summary.json, scratch
};

struct SnrSummary {
    PipelineVariant variant{};
    double snr = 0.0;
    std::size_t trials_ok = 0;
    std::size_t trials_failed = 0;
    double mean_fdp = 0.0, se_fdp = 0.0;
    double mean_tpp = 0.0, se_tpp = 0.0;
};

struct MonteCarloOutcome {
    std::vector<SnrSummary> table;       // one row per (variant, snr)
    std::vector<std::string> failures;   // recorded per-trial errors
};

MonteCarloOutcome run_monte_carlo(const MonteCarloConfig& cfg);

// --- scaling benchmark ---------------------------------------------------------

struct ScalingConfig {
    std::size_t n = 100;
    std::vector<std::size_t> p_list;  // ascending; L = p at every point
    std::vector<PipelineVariant> variants;
    double alpha = 0.2;
    double snr = 1.0;
    std::size_t p1 = 10;
    double coeff = 1.0;
    std::size_t K = 20;
    std::size_t T_max = 0;
    std::uint64_t seed = 0;
    std::uint64_t disk_budget_bytes = 0;  // 0: unchecked
    std::filesystem::path outdir;         // scaling.csv, scratch
};

struct ScalingRow {
    PipelineVariant variant{};
    std::size_t p = 0;
    bool skipped = false;
    std::string skip_reason;
    double seconds = 0.0;
    std::uint64_t cum_alloc_bytes = 0;
    std::uint64_t peak_rss_bytes = 0;
    std::uint64_t disk_bytes = 0;
    std::size_t n_selected = 0;
};

// Estimated matrix bytes a variant writes during one run (header overhead
// excluded): the go/no-go feasibility arithmetic.
std::uint64_t estimate_run_disk_bytes(PipelineVariant variant, std::size_t n,
                                      std::size_t p, std::size_t L, std::size_t K);

std::vector<ScalingRow> run_scaling_bench(const ScalingConfig& cfg);

}  // namespace bigsel

#endif
