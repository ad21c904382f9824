#include "bigsel/simbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bigsel/counters.hpp"
#include "bigsel/rng.hpp"

namespace bigsel {

namespace {

constexpr std::uint64_t kStreamDesign = 1;  // X entries
constexpr std::uint64_t kStreamNoise = 2;   // epsilon
constexpr std::uint64_t kStreamDummies = 3; // experiment base seed per trial

double sample_variance(std::span<const double> v) {
    const std::size_t n = v.size();
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double x : v) {
        const double d = x - mean;
        ss += d * d;
    }
    return ss / static_cast<double>(n - 1);
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
}

// Best-effort reset of the kernel's peak-RSS watermark so per-run probes are
// not dominated by earlier, larger runs in the same process.
void reset_peak_rss() {
    std::ofstream f("/proc/self/clear_refs");
    if (f) f << "5\n";
}

void remove_tree(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
}

}  // namespace

Dataset gen_dataset(const SimConfig& cfg, const std::filesystem::path& x_path,
                    bool overwrite) {
    if (cfg.n < 2 || cfg.p < 1) throw ArgumentError("dataset needs n >= 2, p >= 1");
    if (cfg.p1 < 1 || cfg.p1 > cfg.p)
        throw ArgumentError("active count p1 = " + std::to_string(cfg.p1) +
                            " must lie in [1, p]");
    if (!(cfg.snr > 0.0)) throw ArgumentError("snr must be positive");

    StoredMatrix x = StoredMatrix::create(x_path, cfg.n, cfg.p, overwrite);
    rng::NormalSampler design(rng::derive_seed(cfg.seed, kStreamDesign));
    for (std::size_t j = 0; j < cfg.p; ++j) {
        double* col = x.column_mut(j);
        for (std::size_t i = 0; i < cfg.n; ++i) col[i] = design.next();
    }
    standardize_columns(x);

    // Signal from the standardized design.
    std::vector<double> signal(cfg.n, 0.0);
    for (std::size_t j = 0; j < cfg.p1; ++j) {
        const double* col = x.column(j);
        for (std::size_t i = 0; i < cfg.n; ++i) signal[i] += cfg.coeff * col[i];
    }
    const double signal_var = sample_variance(signal);
    const double sigma = std::sqrt(signal_var / cfg.snr);

    rng::NormalSampler noise(rng::derive_seed(cfg.seed, kStreamNoise));
    std::vector<double> y(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) y[i] = signal[i] + sigma * noise.next();
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(cfg.n);
    for (double& v : y) v -= mean;

    std::vector<std::uint32_t> truth(cfg.p1);
    for (std::size_t j = 0; j < cfg.p1; ++j) truth[j] = static_cast<std::uint32_t>(j);

    x.flush();
    return Dataset{std::move(x), std::move(y), std::move(truth), sigma};
}

TrialMetrics trial_metrics(std::span<const std::uint32_t> selected,
                           std::span<const std::uint32_t> truth) {
    std::vector<std::uint32_t> sel(selected.begin(), selected.end());
    std::vector<std::uint32_t> tru(truth.begin(), truth.end());
    std::sort(sel.begin(), sel.end());
    std::sort(tru.begin(), tru.end());

    std::size_t hits = 0;
    for (std::uint32_t j : sel)
        if (std::binary_search(tru.begin(), tru.end(), j)) ++hits;

    TrialMetrics m;
    m.fdp = static_cast<double>(sel.size() - hits) /
            static_cast<double>(std::max<std::size_t>(1, sel.size()));
    m.tpp = static_cast<double>(hits) /
            static_cast<double>(std::max<std::size_t>(1, tru.size()));
    return m;
}

const char* variant_name(PipelineVariant v) {
    switch (v) {
        case PipelineVariant::Reference: return "reference";
        case PipelineVariant::Fresh: return "fresh";
        case PipelineVariant::DpS1: return "s1";
        case PipelineVariant::DpS2: return "s2";
    }
    return "?";
}

PipelineVariant variant_from_name(const std::string& name) {
    if (name == "reference") return PipelineVariant::Reference;
    if (name == "fresh") return PipelineVariant::Fresh;
    if (name == "s1") return PipelineVariant::DpS1;
    if (name == "s2") return PipelineVariant::DpS2;
    throw ArgumentError("unknown pipeline variant '" + name +
                        "' (reference|fresh|s1|s2)");
}

SelectionResult run_pipeline(PipelineVariant variant,
                             const std::filesystem::path& x_path,
                             std::span<const double> y_centered, TRexConfig cfg,
                             bool resume) {
    std::vector<double> y(y_centered.begin(), y_centered.end());
    switch (variant) {
        case PipelineVariant::Reference: {
            cfg.strategy = StrategyKind::FreshGaussian;
            cfg.jobs = 1;
            StoredMatrix x = StoredMatrix::open(x_path, AccessMode::ReadOnly);
            InMemoryWorkspace ws(x, std::move(y), cfg);
            return calibrate(cfg, ws, resume);
        }
        case PipelineVariant::Fresh:
            cfg.strategy = StrategyKind::FreshGaussian;
            break;
        case PipelineVariant::DpS1:
            cfg.strategy = StrategyKind::PermuteS1;
            break;
        case PipelineVariant::DpS2:
            cfg.strategy = StrategyKind::PermuteS2;
            break;
    }
    OutOfCoreWorkspace ws(x_path, std::move(y), cfg);
    return calibrate(cfg, ws, resume);
}

// --- Monte Carlo ----------------------------------------------------------------

MonteCarloOutcome run_monte_carlo(const MonteCarloConfig& cfg) {
    if (cfg.snr_list.empty() || cfg.variants.empty())
        throw ArgumentError("monte carlo needs at least one snr and one variant");
    if (cfg.sim.trials < 1) throw ArgumentError("trials must be >= 1");

    std::filesystem::create_directories(cfg.outdir);
    const auto scratch = cfg.outdir / "scratch";
    std::filesystem::create_directories(scratch);

    std::ofstream csv(cfg.outdir / "mc_trials.csv", std::ios::trunc);
    if (!csv) throw StorageError("cannot write mc_trials.csv");
    csv << "trial,variant,snr,fdp,tpp,seconds\n";

    struct Acc {
        std::vector<double> fdp, tpp;
        std::size_t failed = 0;
    };
    std::vector<std::vector<Acc>> acc(cfg.variants.size(),
                                      std::vector<Acc>(cfg.snr_list.size()));
    MonteCarloOutcome outcome;

    const std::size_t L = cfg.L > 0 ? cfg.L : cfg.sim.p;

    for (std::size_t trial = 0; trial < cfg.sim.trials; ++trial) {
        const std::uint64_t trial_seed = rng::derive_seed(cfg.sim.seed, trial);
        for (std::size_t si = 0; si < cfg.snr_list.size(); ++si) {
            const auto trial_dir =
                scratch / ("trial" + std::to_string(trial) + "_snr" + std::to_string(si));
            std::filesystem::create_directories(trial_dir);

            SimConfig sim = cfg.sim;
            sim.snr = cfg.snr_list[si];
            sim.seed = rng::derive_seed(trial_seed, si);

            try {
                Dataset data = gen_dataset(sim, trial_dir / "X.fbm");
                for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
                    const PipelineVariant variant = cfg.variants[vi];
                    TRexConfig rc;
                    rc.alpha = cfg.alpha;
                    rc.K = cfg.K;
                    rc.L = L;
                    rc.base_seed = rng::derive_seed(sim.seed, kStreamDummies);
                    rc.T_max = cfg.T_max;
                    rc.jobs = cfg.jobs;
                    rc.workdir = trial_dir / variant_name(variant);

                    const auto start = std::chrono::steady_clock::now();
                    try {
                        const SelectionResult result = run_pipeline(
                            variant, data.X.path(), data.y, rc);
                        TrialMetrics m = trial_metrics(result.selected, data.truth);
                        m.wall_seconds = elapsed_seconds(start);
                        acc[vi][si].fdp.push_back(m.fdp);
                        acc[vi][si].tpp.push_back(m.tpp);
                        csv << trial << ',' << variant_name(variant) << ','
                            << sim.snr << ',' << m.fdp << ',' << m.tpp << ','
                            << m.wall_seconds << '\n';
                    } catch (const std::exception& e) {
                        acc[vi][si].failed += 1;
                        outcome.failures.push_back(
                            "trial " + std::to_string(trial) + " snr " +
                            std::to_string(sim.snr) + " variant " +
                            variant_name(variant) + ": " + e.what());
                    }
                }
            } catch (const std::exception& e) {
                for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi)
                    acc[vi][si].failed += 1;
                outcome.failures.push_back("trial " + std::to_string(trial) +
                                           " dataset generation: " + e.what());
            }
            csv.flush();
            remove_tree(trial_dir);
        }
    }

    nlohmann::json summary = nlohmann::json::array();
    for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
        for (std::size_t si = 0; si < cfg.snr_list.size(); ++si) {
            const Acc& a = acc[vi][si];
            SnrSummary row;
            row.variant = cfg.variants[vi];
            row.snr = cfg.snr_list[si];
            row.trials_ok = a.fdp.size();
            row.trials_failed = a.failed;
            auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
                mean = 0.0;
                se = 0.0;
                if (v.empty()) return;
                for (double x : v) mean += x;
                mean /= static_cast<double>(v.size());
                if (v.size() < 2) return;
                double ss = 0.0;
                for (double x : v) ss += (x - mean) * (x - mean);
                const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
                se = sd / std::sqrt(static_cast<double>(v.size()));
            };
            mean_se(a.fdp, row.mean_fdp, row.se_fdp);
            mean_se(a.tpp, row.mean_tpp, row.se_tpp);
            outcome.table.push_back(row);
            summary.push_back({{"variant", variant_name(row.variant)},
                               {"snr", row.snr},
                               {"trials_ok", row.trials_ok},
                               {"trials_failed", row.trials_failed},
                               {"mean_fdp", row.mean_fdp},
                               {"se_fdp", row.se_fdp},
                               {"mean_tpp", row.mean_tpp},
                               {"se_tpp", row.se_tpp}});
        }
    }
    std::ofstream js(cfg.outdir / "mc_summary.json", std::ios::trunc);
    js << summary.dump(2) << '\n';

    remove_tree(scratch);
    return outcome;
}

// --- scaling benchmark -------------------------------------------------------------

std::uint64_t estimate_run_disk_bytes(PipelineVariant variant, std::size_t n,
                                      std::size_t p, std::size_t L, std::size_t K) {
    const std::uint64_t cell = 8ull * n;
    switch (variant) {
        case PipelineVariant::Reference:
            return cell * p;  // the generated dataset only
        case PipelineVariant::Fresh:
            return cell * (p + K * (p + L));
        case PipelineVariant::DpS1:
        case PipelineVariant::DpS2:
            return cell * (p + 2 * L);
    }
    return 0;
}

std::vector<ScalingRow> run_scaling_bench(const ScalingConfig& cfg) {
    if (cfg.p_list.empty() || cfg.variants.empty())
        throw ArgumentError("scaling bench needs p values and variants");
    if (!std::is_sorted(cfg.p_list.begin(), cfg.p_list.end()))
        throw ArgumentError("p values must be ascending");

    std::filesystem::create_directories(cfg.outdir);
    const auto scratch = cfg.outdir / "scratch";

    std::ofstream csv(cfg.outdir / "scaling.csv", std::ios::trunc);
    if (!csv) throw StorageError("cannot write scaling.csv");
    csv << "variant,p,seconds,cum_alloc_bytes,peak_rss_bytes,disk_bytes,"
           "n_selected,skipped,skip_reason\n";

    std::vector<ScalingRow> rows;
    for (std::size_t p : cfg.p_list) {
        const std::size_t L = p;
        for (PipelineVariant variant : cfg.variants) {
            ScalingRow row;
            row.variant = variant;
            row.p = p;

            const std::uint64_t need =
                estimate_run_disk_bytes(variant, cfg.n, p, L, cfg.K);
            if (cfg.disk_budget_bytes > 0 && need > cfg.disk_budget_bytes) {
                row.skipped = true;
                row.skip_reason = "needs " + std::to_string(need) +
                                  " bytes on disk, budget " +
                                  std::to_string(cfg.disk_budget_bytes);
                rows.push_back(row);
                csv << variant_name(variant) << ',' << p << ",0,0,0,0,0,1,\""
                    << row.skip_reason << "\"\n";
                csv.flush();
                continue;
            }

            remove_tree(scratch);
            std::filesystem::create_directories(scratch);

            SimConfig sim;
            sim.n = cfg.n;
            sim.p = p;
            sim.p1 = std::min(cfg.p1, p);
            sim.coeff = cfg.coeff;
            sim.snr = cfg.snr;
            sim.seed = rng::derive_seed(cfg.seed, p);

            TRexConfig rc;
            rc.alpha = cfg.alpha;
            rc.K = cfg.K;
            rc.L = L;
            rc.base_seed = rng::derive_seed(sim.seed, kStreamDummies);
            rc.T_max = cfg.T_max;
            rc.workdir = scratch / variant_name(variant);

            reset_peak_rss();
            const counters::Snapshot before = counters::snapshot();
            const auto start = std::chrono::steady_clock::now();
            try {
                Dataset data = gen_dataset(sim, scratch / "X.fbm");
                const SelectionResult result =
                    run_pipeline(variant, data.X.path(), data.y, rc);
                row.n_selected = result.selected.size();
            } catch (const std::exception& e) {
                row.skipped = true;
                row.skip_reason = e.what();
            }
            row.seconds = elapsed_seconds(start);
            const counters::Snapshot delta = counters::delta_since(before);
            row.cum_alloc_bytes = delta.alloc_bytes;
            row.disk_bytes = delta.disk_bytes;
            row.peak_rss_bytes = counters::peak_rss_bytes();

            rows.push_back(row);
            csv << variant_name(variant) << ',' << p << ',' << row.seconds << ','
                << row.cum_alloc_bytes << ',' << row.peak_rss_bytes << ','
                << row.disk_bytes << ',' << row.n_selected << ','
                << (row.skipped ? 1 : 0) << ",\"" << row.skip_reason << "\"\n";
            csv.flush();
        }
    }
    remove_tree(scratch);
    return rows;
}

}  // namespace bigsel
