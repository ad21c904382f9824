// bigsel: FDR-controlled sparse variable selection for designs that do not
// fit in RAM. Subcommands run selection on user files, reproduce simulation
// and scaling studies, validate dummy strategies, and estimate resource needs.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bigsel/counters.hpp"
#include "bigsel/dummy.hpp"
#include "bigsel/matstore.hpp"
#include "bigsel/rng.hpp"
#include "bigsel/serialize.hpp"
#include "bigsel/simbench.hpp"
#include "bigsel/trex.hpp"

namespace {

constexpr const char* kToolVersion = "bigsel 0.1.0";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
    return buf;
}

std::uint64_t file_fnv64(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw bigsel::StorageError("cannot open " + path.string());
    std::uint64_t h = bigsel::kFnvOffset;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        const std::streamsize got = in.gcount();
        h = bigsel::fnv1a64(
            std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(buf),
                                          static_cast<std::size_t>(got)),
            h);
    }
    return h;
}

std::string human_gib(std::uint64_t bytes) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1)
       << static_cast<double>(bytes) / (1024.0 * 1024.0 * 1024.0) << " GiB";
    return os.str();
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    if (out.empty()) throw bigsel::ArgumentError("empty list: '" + text + "'");
    return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
    std::vector<std::size_t> out;
    for (double v : parse_double_list(text)) {
        if (v < 1) throw bigsel::ArgumentError("list entries must be >= 1");
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

std::vector<bigsel::PipelineVariant> parse_variants(const std::string& text) {
    std::vector<bigsel::PipelineVariant> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(bigsel::variant_from_name(item));
    if (out.empty()) throw bigsel::ArgumentError("no variants given");
    return out;
}

std::filesystem::path resolve_workdir(std::string flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("BIGSEL_WORKDIR"); env && *env) return env;
    throw bigsel::ArgumentError(
        "no working directory: pass --workdir or set BIGSEL_WORKDIR");
}

// L flag accepts a number, "auto" (10p) or "p".
std::size_t resolve_l(const std::string& text, std::size_t p) {
    if (text == "auto") return 10 * p;
    if (text == "p") return p;
    const double v = std::stod(text);
    if (v < 1) throw bigsel::ArgumentError("--l must be >= 1");
    return static_cast<std::size_t>(v);
}

nlohmann::json trace_json(const bigsel::SelectionResult& result) {
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& e : result.fdp_trace)
        trace.push_back({{"T", e.T},
                         {"v", e.v},
                         {"fdp", e.fdp},
                         {"n_selected", e.n_selected}});
    return trace;
}

// --- select -------------------------------------------------------------------

struct SelectArgs {
    std::string x_path;
    std::string y_path;
    double alpha = 0.1;
    std::size_t k = 20;
    std::string l_text = "auto";
    std::string strategy = "fresh";
    std::uint64_t seed = 0;
    std::string workdir;
    std::string out = "result.json";
    std::size_t t_max = 0;
    std::size_t jobs = 1;
    bool resume = false;
    bool lasso = false;
};

int cmd_select(const SelectArgs& args) {
    const auto t_total = Clock::now();
    const std::filesystem::path workdir = resolve_workdir(args.workdir);
    std::filesystem::create_directories(workdir);

    nlohmann::json manifest;
    manifest["tool"] = kToolVersion;
    manifest["command"] = "select";
    manifest["timestamp"] = iso_timestamp();
    manifest["workdir"] = workdir.string();

    // Stage 1: bring X into the working directory, standardized.
    const auto t_import = Clock::now();
    for (const std::string& in : {args.x_path, args.y_path})
        if (!std::filesystem::exists(in))
            throw bigsel::StorageError("input file does not exist: " + in);
    manifest["inputs"]["x"] = {{"path", args.x_path},
                               {"bytes", std::filesystem::file_size(args.x_path)},
                               {"fnv64", file_fnv64(args.x_path)}};
    manifest["inputs"]["y"] = {{"path", args.y_path},
                               {"bytes", std::filesystem::file_size(args.y_path)},
                               {"fnv64", file_fnv64(args.y_path)}};

    const std::filesystem::path x_std = workdir / "X.std.fbm";
    {
        const bool is_binary = args.x_path.size() > 4 &&
                               args.x_path.substr(args.x_path.size() - 4) == ".fbm";
        if (is_binary) {
            bigsel::StoredMatrix src =
                bigsel::StoredMatrix::open(args.x_path, bigsel::AccessMode::ReadOnly);
            bigsel::StoredMatrix dst = bigsel::StoredMatrix::create(
                x_std, src.rows(), src.cols(), /*overwrite=*/true);
            for (std::size_t j = 0; j < src.cols(); ++j)
                std::copy_n(src.column(j), src.rows(), dst.column_mut(j));
        } else {
            bigsel::import_csv(args.x_path, x_std, /*overwrite=*/true);
        }
    }
    bigsel::StoredMatrix x = bigsel::StoredMatrix::open(x_std, bigsel::AccessMode::ReadWrite);
    const auto stats = bigsel::standardize_columns(x);
    {
        std::ofstream sc(workdir / "standardization.csv", std::ios::trunc);
        sc << "column,mean,sd\n";
        for (std::size_t j = 0; j < stats.size(); ++j)
            sc << j << ',' << stats[j].mean << ',' << stats[j].sd << '\n';
    }
    x.flush();
    const std::size_t n = x.rows();
    const std::size_t p = x.cols();

    std::vector<double> y;
    if (args.y_path.size() > 4 &&
        args.y_path.substr(args.y_path.size() - 4) == ".fbm") {
        bigsel::StoredMatrix ym =
            bigsel::StoredMatrix::open(args.y_path, bigsel::AccessMode::ReadOnly);
        if (ym.cols() != 1)
            throw bigsel::ArgumentError("response matrix must have one column");
        y.assign(ym.column(0), ym.column(0) + ym.rows());
    } else {
        y = bigsel::read_csv_vector(args.y_path);
    }
    if (y.size() != n)
        throw bigsel::ArgumentError("response length " + std::to_string(y.size()) +
                                    " does not match sample count " + std::to_string(n));
    double y_mean = 0.0;
    for (double v : y) y_mean += v;
    y_mean /= static_cast<double>(n);
    for (double& v : y) v -= y_mean;
    manifest["y_mean_removed"] = y_mean;
    manifest["timings"]["import_s"] = seconds_since(t_import);

    // Stage 2: calibrate.
    const auto t_run = Clock::now();
    bigsel::TRexConfig cfg;
    cfg.alpha = args.alpha;
    cfg.K = args.k;
    cfg.L = resolve_l(args.l_text, p);
    cfg.strategy = bigsel::strategy_from_name(args.strategy);
    cfg.base_seed = args.seed;
    cfg.T_max = args.t_max;
    cfg.workdir = workdir;
    cfg.jobs = args.jobs;
    cfg.lasso_drop = args.lasso;
    if (cfg.jobs > 1 && cfg.strategy != bigsel::StrategyKind::FreshGaussian) {
        std::cerr << "note: permutation strategies share one dummy block; "
                     "forcing --jobs 1\n";
        cfg.jobs = 1;
    }

    const bigsel::PipelineVariant variant =
        cfg.strategy == bigsel::StrategyKind::FreshGaussian
            ? bigsel::PipelineVariant::Fresh
            : (cfg.strategy == bigsel::StrategyKind::PermuteS1
                   ? bigsel::PipelineVariant::DpS1
                   : bigsel::PipelineVariant::DpS2);
    const bigsel::SelectionResult result =
        bigsel::run_pipeline(variant, x_std, y, cfg, args.resume);
    manifest["timings"]["calibrate_s"] = seconds_since(t_run);

    // Stage 3: write results.
    const auto t_write = Clock::now();
    const auto counters = bigsel::counters::snapshot();
    nlohmann::json out;
    out["selected"] = result.selected;
    out["v_star"] = result.v_star;
    out["T_star"] = result.T_star;
    out["fdp_trace"] = trace_json(result);
    out["config"] = {{"n", n},
                     {"p", p},
                     {"L", cfg.L},
                     {"K", cfg.K},
                     {"alpha", cfg.alpha},
                     {"strategy", bigsel::strategy_name(cfg.strategy)},
                     {"seed", cfg.base_seed},
                     {"T_max", cfg.effective_t_max(n)},
                     {"lasso", cfg.lasso_drop}};
    out["counters"] = {{"alloc_bytes", counters.alloc_bytes},
                       {"disk_bytes", counters.disk_bytes}};
    {
        std::ofstream f(args.out, std::ios::trunc);
        if (!f) throw bigsel::StorageError("cannot write " + args.out);
        f << out.dump(2) << '\n';
    }

    manifest["config"] = out["config"];
    manifest["seed"] = cfg.base_seed;
    manifest["result_path"] = args.out;
    manifest["n_selected"] = result.selected.size();
    manifest["timings"]["write_s"] = seconds_since(t_write);
    manifest["timings"]["total_s"] = seconds_since(t_total);
    manifest["outcome"] = "ok";
    {
        std::ofstream f(workdir / "manifest.json", std::ios::trunc);
        f << manifest.dump(2) << '\n';
    }

    std::cout << "selected " << result.selected.size() << " variables (v* = "
              << result.v_star << ", T* = " << result.T_star << ")\n"
              << "result: " << args.out << "\n";
    return 0;
}

// --- feasibility -----------------------------------------------------------------

int cmd_feasibility(std::size_t n, std::size_t p, const std::string& l_text,
                    std::size_t k, std::uint64_t ram_budget,
                    std::uint64_t disk_budget) {
    const std::size_t L = resolve_l(l_text, p);
    const std::uint64_t cell = 8ull * n;
    const std::uint64_t x_dense = cell * p;
    const std::uint64_t all_dense = cell * (p + k * (p + L));
    const std::uint64_t disk_fresh = cell * (p + k * (p + L));
    const std::uint64_t disk_dp = cell * (p + 2 * L);

    std::cout << "design X (" << n << " x " << p << ") dense in RAM: " << x_dense
              << " bytes (" << human_gib(x_dense) << ")\n";
    std::cout << "all " << k << " enlarged designs dense in RAM: " << all_dense
              << " bytes (" << human_gib(all_dense) << ")\n";
    std::cout << "disk, fresh dummy matrices: " << disk_fresh << " bytes ("
              << human_gib(disk_fresh) << ")\n";
    std::cout << "disk, permuted reference (s1/s2): " << disk_dp << " bytes ("
              << human_gib(disk_dp) << ")\n";

    if (ram_budget > 0) {
        std::cout << "dense pipeline within RAM budget: "
                  << (all_dense <= ram_budget ? "yes" : "no") << "\n";
    }
    if (disk_budget > 0) {
        std::cout << "fresh within disk budget: "
                  << (disk_fresh <= disk_budget ? "yes" : "no") << "\n";
        std::cout << "s1/s2 within disk budget: "
                  << (disk_dp <= disk_budget ? "yes" : "no") << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FDR-controlled sparse variable selection on disk-resident "
                 "designs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    // select
    SelectArgs sel;
    auto* select = app.add_subcommand("select", "run selection on data files");
    select->add_option("--x", sel.x_path, "design matrix (.fbm or CSV)")->required();
    select->add_option("--y", sel.y_path, "response vector (CSV or 1-column .fbm)")
        ->required();
    select->add_option("--alpha", sel.alpha, "target FDR level in [0,1]");
    select->add_option("--k", sel.k, "number of random experiments");
    select->add_option("--l", sel.l_text, "dummy count (number, 'auto' = 10p, 'p')");
    select->add_option("--strategy", sel.strategy, "dummy strategy: fresh|s1|s2");
    select->add_option("--seed", sel.seed, "base seed");
    select->add_option("--workdir", sel.workdir,
                       "working directory (fallback: BIGSEL_WORKDIR)");
    select->add_option("--out", sel.out, "result JSON path");
    select->add_option("--t-max", sel.t_max, "cap on the dummy stop count");
    select->add_option("--jobs", sel.jobs, "concurrent experiments (fresh only)");
    select->add_flag("--resume", sel.resume, "continue an interrupted calibration");
    select->add_flag("--lasso", sel.lasso, "enable the lasso drop modification");

    // feasibility
    std::size_t fz_n = 0, fz_p = 0, fz_k = 20;
    std::string fz_l = "p";
    std::uint64_t fz_ram = 0, fz_disk = 0;
    auto* feas = app.add_subcommand("feasibility",
                                    "estimate RAM/disk needs before a run");
    feas->add_option("--n", fz_n, "samples")->required();
    feas->add_option("--p", fz_p, "variables")->required();
    feas->add_option("--l", fz_l, "dummy count (number, 'auto', 'p')");
    feas->add_option("--k", fz_k, "number of random experiments");
    feas->add_option("--ram-budget", fz_ram, "RAM budget in bytes");
    feas->add_option("--disk-budget", fz_disk, "disk budget in bytes");

    // simulate
    std::size_t sm_n = 150, sm_p = 300, sm_p1 = 10, sm_trials = 10, sm_k = 20,
                sm_tmax = 0, sm_jobs = 1;
    double sm_alpha = 0.1, sm_coeff = 1.0;
    std::string sm_snr = "0.5,1,2,5", sm_variants = "fresh,s1,s2", sm_l = "p",
                sm_outdir = "mc_out";
    std::uint64_t sm_seed = 0;
    auto* sim = app.add_subcommand("simulate",
                                   "Monte Carlo FDR/TPR study on synthetic data");
    sim->add_option("--n", sm_n, "samples");
    sim->add_option("--p", sm_p, "variables");
    sim->add_option("--p1", sm_p1, "true active variables");
    sim->add_option("--coeff", sm_coeff, "active coefficient value");
    sim->add_option("--snr", sm_snr, "comma list of SNR levels");
    sim->add_option("--alpha", sm_alpha, "target FDR level");
    sim->add_option("--k", sm_k, "experiments per selection");
    sim->add_option("--l", sm_l, "dummy count (number, 'auto', 'p')");
    sim->add_option("--trials", sm_trials, "Monte Carlo trials per SNR");
    sim->add_option("--variants", sm_variants, "comma list: reference,fresh,s1,s2");
    sim->add_option("--seed", sm_seed, "base seed");
    sim->add_option("--outdir", sm_outdir, "output directory");
    sim->add_option("--t-max", sm_tmax, "cap on the dummy stop count");
    sim->add_option("--jobs", sm_jobs, "concurrent experiments (fresh only)");

    // bench
    std::string bn_p = "1e3,1e4,1e5", bn_variants = "reference,fresh,s1,s2",
                bn_outdir = "bench_out";
    std::size_t bn_n = 100, bn_k = 20, bn_tmax = 0, bn_p1 = 10;
    double bn_tfdr = 0.2, bn_snr = 1.0;
    std::uint64_t bn_seed = 0, bn_disk = 0;
    auto* bench = app.add_subcommand("bench", "time/RAM/disk scaling benchmark");
    bench->add_option("--p", bn_p, "comma list of variable counts (L = p)");
    bench->add_option("--n", bn_n, "samples");
    bench->add_option("--p1", bn_p1, "true active variables");
    bench->add_option("--tfdr", bn_tfdr, "target FDR level");
    bench->add_option("--snr", bn_snr, "signal-to-noise ratio");
    bench->add_option("--k", bn_k, "experiments per selection");
    bench->add_option("--variants", bn_variants, "comma list: reference,fresh,s1,s2");
    bench->add_option("--seed", bn_seed, "base seed");
    bench->add_option("--outdir", bn_outdir, "output directory");
    bench->add_option("--disk-budget", bn_disk, "skip points beyond this many bytes");
    bench->add_option("--t-max", bn_tmax, "cap on the dummy stop count");

    // validate-dummies
    std::string vd_strategy = "s1", vd_out = "qq.csv", vd_klist = "2,3,4,5,6,7,8,9,10";
    std::size_t vd_n = 100, vd_l = 200;
    std::uint64_t vd_seed = 0;
    auto* vd = app.add_subcommand("validate-dummies",
                                  "quantile alignment check of permuted dummies");
    vd->add_option("--strategy", vd_strategy, "s1|s2");
    vd->add_option("--n", vd_n, "samples");
    vd->add_option("--l", vd_l, "dummy count");
    vd->add_option("--k-list", vd_klist, "comma list of experiment indices (k >= 2)");
    vd->add_option("--seed", vd_seed, "base seed");
    vd->add_option("--out", vd_out, "quantile pair CSV path");

    // import
    std::string im_csv, im_out;
    bool im_overwrite = false;
    auto* imp = app.add_subcommand("import", "convert dense numeric CSV to .fbm");
    imp->add_option("--csv", im_csv, "input CSV (rows = samples)")->required();
    imp->add_option("--out", im_out, "output .fbm path")->required();
    imp->add_flag("--overwrite", im_overwrite, "replace an existing output file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        app.exit(e);
        return 2;
    }

    try {
        if (select->parsed()) return cmd_select(sel);
        if (feas->parsed()) return cmd_feasibility(fz_n, fz_p, fz_l, fz_k, fz_ram, fz_disk);
        if (sim->parsed()) {
            bigsel::MonteCarloConfig cfg;
            cfg.sim.n = sm_n;
            cfg.sim.p = sm_p;
            cfg.sim.p1 = sm_p1;
            cfg.sim.coeff = sm_coeff;
            cfg.sim.seed = sm_seed;
            cfg.sim.trials = sm_trials;
            cfg.snr_list = parse_double_list(sm_snr);
            cfg.variants = parse_variants(sm_variants);
            cfg.alpha = sm_alpha;
            cfg.K = sm_k;
            cfg.L = sm_l == "p" ? sm_p : resolve_l(sm_l, sm_p);
            cfg.T_max = sm_tmax;
            cfg.jobs = sm_jobs;
            cfg.outdir = sm_outdir;
            const auto outcome = bigsel::run_monte_carlo(cfg);
            for (const auto& row : outcome.table)
                std::cout << bigsel::variant_name(row.variant) << " snr " << row.snr
                          << ": FDR " << row.mean_fdp << " (se " << row.se_fdp
                          << "), TPR " << row.mean_tpp << " (se " << row.se_tpp
                          << "), trials " << row.trials_ok << "\n";
            for (const auto& f : outcome.failures) std::cerr << "failure: " << f << "\n";
            std::cout << "wrote " << (cfg.outdir / "mc_trials.csv").string() << "\n";
            return outcome.failures.empty() ? 0 : 1;
        }
        if (bench->parsed()) {
            bigsel::ScalingConfig cfg;
            cfg.n = bn_n;
            cfg.p_list = parse_size_list(bn_p);
            cfg.variants = parse_variants(bn_variants);
            cfg.alpha = bn_tfdr;
            cfg.snr = bn_snr;
            cfg.p1 = bn_p1;
            cfg.K = bn_k;
            cfg.T_max = bn_tmax;
            cfg.seed = bn_seed;
            cfg.disk_budget_bytes = bn_disk;
            cfg.outdir = bn_outdir;
            const auto rows = bigsel::run_scaling_bench(cfg);
            for (const auto& row : rows) {
                std::cout << bigsel::variant_name(row.variant) << " p " << row.p;
                if (row.skipped)
                    std::cout << ": skipped (" << row.skip_reason << ")\n";
                else
                    std::cout << ": " << row.seconds << " s, alloc "
                              << row.cum_alloc_bytes << " B, disk " << row.disk_bytes
                              << " B\n";
            }
            std::cout << "wrote " << (cfg.outdir / "scaling.csv").string() << "\n";
            return 0;
        }
        if (vd->parsed()) {
            const auto tmp = std::filesystem::temp_directory_path() /
                             ("bigsel_vd_" + std::to_string(::getpid()));
            std::filesystem::create_directories(tmp);
            bigsel::DummyStrategy strategy{bigsel::strategy_from_name(vd_strategy),
                                           vd_l, vd_seed};
            if (strategy.kind == bigsel::StrategyKind::FreshGaussian)
                throw bigsel::ArgumentError(
                    "validate-dummies checks the permutation strategies (s1|s2)");
            auto ref = bigsel::gen_reference(
                tmp / "ref.fbm", vd_n, vd_l,
                bigsel::rng::derive_seed(vd_seed, 0x72656656ULL));
            const auto k_list = parse_size_list(vd_klist);
            const auto report = bigsel::qq_alignment(ref, k_list, strategy);
            bigsel::write_qq_csv(vd_out, report);
            for (const auto& per : report.per_experiment)
                std::cout << "k " << per.k << ": bulk deviation "
                          << per.bulk_deviation << "\n";
            std::cout << "max bulk deviation: " << report.max_bulk_deviation
                      << "\nwrote " << vd_out << "\n";
            std::error_code ec;
            std::filesystem::remove_all(tmp, ec);
            return 0;
        }
        if (imp->parsed()) {
            auto m = bigsel::import_csv(im_csv, im_out, im_overwrite);
            std::cout << "wrote " << im_out << " (" << m.rows() << " x " << m.cols()
                      << ")\n";
            return 0;
        }
    } catch (const bigsel::ReproducibilityError& e) {
        std::cerr << "reproducibility error: " << e.what() << "\n";
        return 4;
    } catch (const bigsel::StorageError& e) {
        std::cerr << "storage error: " << e.what() << "\n";
        return 3;
    } catch (const bigsel::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const bigsel::ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
