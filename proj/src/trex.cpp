#include "bigsel/trex.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <mutex>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "bigsel/counters.hpp"
#include "bigsel/rng.hpp"
#include "bigsel/serialize.hpp"

namespace bigsel {

namespace {

// Substream tag for the shared reference matrix seed.
constexpr std::uint64_t kStreamReference = 0x72656656ULL;

std::uint64_t reference_seed(std::uint64_t base_seed) {
    return rng::derive_seed(base_seed, kStreamReference);
}

std::vector<std::uint32_t> members_below_p(const TLarsState& st) {
    std::vector<std::uint32_t> out;
    out.reserve(st.active.size());
    for (std::size_t j : st.active)
        if (j < st.p) out.push_back(static_cast<std::uint32_t>(j));
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

double default_fdp_estimator(std::size_t n_selected, std::size_t T,
                             std::size_t L, std::size_t p) {
    if (n_selected == 0) return 0.0;
    if (T < 1 || T > L) throw ArgumentError("dummy count T must lie in [1, L]");
    const double dummy_rate =
        static_cast<double>(T) / static_cast<double>(L - T + 1);
    const double nulls = static_cast<double>(p - std::min(p, n_selected));
    return dummy_rate * nulls / static_cast<double>(std::max<std::size_t>(1, n_selected));
}

void TRexConfig::validate(std::size_t n, std::size_t p) const {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ArgumentError("target FDR level must lie in [0, 1]");
    if (K < 2) throw ArgumentError("experiment count K must be >= 2");
    if (L < 1) throw ArgumentError("dummy count L must be >= 1");
    if (p < 1 || n < 2) throw ArgumentError("need n >= 2 and p >= 1");
    const std::size_t tmax = effective_t_max(n);
    if (tmax < 1 || tmax > L)
        throw ArgumentError("T_max must lie in [1, L]");
    if (jobs < 1) throw ArgumentError("jobs must be >= 1");
    if (jobs > 1 && strategy != StrategyKind::FreshGaussian)
        throw ArgumentError("concurrent experiments require the fresh strategy; "
                            "permutation strategies share one dummy block");
}

std::size_t TRexConfig::effective_t_max(std::size_t n) const {
    if (T_max > 0) return T_max;
    return std::min(L, (n + 1) / 2);
}

std::uint64_t TRexConfig::config_hash(std::size_t n, std::size_t p) const {
    ByteWriter w;
    w.u64(n);
    w.u64(p);
    w.u64(L);
    w.u8(static_cast<std::uint8_t>(strategy));
    w.u64(base_seed);
    w.f64(alpha);
    w.u64(K);
    return fnv1a64(w.buffer());
}

double TRexConfig::fdp(std::size_t n_selected, std::size_t T, std::size_t p) const {
    if (fdp_estimator) return fdp_estimator(n_selected, T, L, p);
    return default_fdp_estimator(n_selected, T, L, p);
}

double RelOccurrenceTable::phi(std::size_t T, std::size_t j) const {
    if (j >= n_variables) throw IndexError("variable index out of range");
    if (T == 0) return 0.0;
    if (T > counts.size()) throw IndexError("no occurrence counts recorded for T");
    return static_cast<double>(counts[T - 1][j]) /
           static_cast<double>(n_experiments);
}

std::vector<std::uint32_t> compute_phi_counts(std::span<const CandidateSet> sets,
                                              std::size_t K, std::size_t T,
                                              std::size_t p) {
    if (sets.size() != K)
        throw ArgumentError("expected exactly K = " + std::to_string(K) +
                            " candidate sets, got " + std::to_string(sets.size()));
    std::vector<std::uint32_t> counts(p, 0);
    for (const CandidateSet& cs : sets) {
        if (cs.T != T)
            throw ArgumentError("candidate set for experiment " + std::to_string(cs.k) +
                                " carries T = " + std::to_string(cs.T) + ", expected " +
                                std::to_string(T));
        for (std::uint32_t j : cs.members) {
            if (j >= p) throw ArgumentError("candidate index >= p");
            counts[j] += 1;
        }
    }
    return counts;
}

std::vector<double> voting_grid(std::size_t K) {
    if (K < 2) throw ArgumentError("voting grid needs K >= 2");
    std::vector<double> grid;
    // v = (K + 2i) / (2K) while v <= 1 - 1/K
    for (std::size_t i = 0; K + 2 * i <= 2 * K - 2; ++i)
        grid.push_back(static_cast<double>(K + 2 * i) / static_cast<double>(2 * K));
    return grid;
}

std::vector<std::uint32_t> select_by_vote(std::span<const std::uint32_t> counts,
                                          std::size_t K, double v) {
    // Grid levels are multiples of 1/(2K); recover the exact numerator so the
    // strict comparison count/K > v happens in integers.
    const auto numer = static_cast<long long>(
        std::llround(v * 2.0 * static_cast<double>(K)));
    std::vector<std::uint32_t> out;
    for (std::size_t j = 0; j < counts.size(); ++j)
        if (2ll * static_cast<long long>(counts[j]) > numer)
            out.push_back(static_cast<std::uint32_t>(j));
    return out;
}

double estimate_fdp(std::span<const std::uint32_t> counts, std::size_t K,
                    double v, std::size_t T, std::size_t L, std::size_t p,
                    const FdpEstimator& estimator) {
    if (!(v >= 0.0 && v < 1.0)) throw ArgumentError("voting level must lie in [0, 1)");
    const std::size_t a = select_by_vote(counts, K, v).size();
    if (estimator) return estimator(a, T, L, p);
    return default_fdp_estimator(a, T, L, p);
}

// --- out-of-core workspace ------------------------------------------------------

struct OutOfCoreWorkspace::Impl {
    TRexConfig cfg;
    StoredMatrix x;
    std::filesystem::path workdir;

    // Permutation strategies share one reference and one mutable block.
    std::optional<DummyReference> ref;
    std::optional<StoredMatrix> block;

    // Fresh-mode blocks are immutable once written; their digests are
    // verified once per process and then served from memory.
    std::mutex digest_mutex;
    std::unordered_map<std::size_t, std::uint64_t> fresh_digests;

    Impl(const std::filesystem::path& x_path, const TRexConfig& config,
         const std::filesystem::path& dir)
        : cfg(config), x(StoredMatrix::open(x_path, AccessMode::ReadOnly)), workdir(dir) {}

    std::filesystem::path ref_path() const { return workdir / "ref.fbm"; }
    std::filesystem::path ref_digest_path() const { return workdir / "ref.digest"; }
    std::filesystem::path block_path() const { return workdir / "block.fbm"; }
    std::filesystem::path enlarged_path(std::size_t k) const {
        return workdir / ("enlarged_k" + std::to_string(k) + ".fbm");
    }
    std::filesystem::path checkpoint_path(std::size_t k) const {
        return workdir / ("tlars_k" + std::to_string(k) + ".ckpt");
    }
    std::filesystem::path digest_path(std::size_t k) const {
        return workdir / ("dummies_k" + std::to_string(k) + ".digest");
    }
    std::filesystem::path journal_path() const { return workdir / "progress.json"; }

    void ensure_reference() {
        if (ref.has_value()) return;
        const std::uint64_t seed = reference_seed(cfg.base_seed);
        const std::size_t n = x.rows();
        if (std::filesystem::exists(ref_path()) &&
            std::filesystem::exists(ref_digest_path())) {
            StoredMatrix m = StoredMatrix::open(ref_path(), AccessMode::ReadOnly);
            if (m.rows() == n && m.cols() == cfg.L &&
                read_digest_file(ref_digest_path()) == digest_block(m)) {
                ref.emplace(DummyReference{std::move(m), seed});
                return;
            }
        }
        // Stale or absent: rebuild the canonical reference for this seed.
        ref.emplace(gen_reference(ref_path(), n, cfg.L, seed, /*overwrite=*/true));
        write_digest_file(ref_digest_path(), digest_block(ref->matrix));
    }

    void ensure_block() {
        if (block.has_value()) return;
        if (std::filesystem::exists(block_path())) {
            block.emplace(StoredMatrix::open(block_path(), AccessMode::ReadWrite));
            if (block->rows() == x.rows() && block->cols() == cfg.L) return;
            block.reset();
        }
        block.emplace(StoredMatrix::create(block_path(), x.rows(), cfg.L,
                                           /*overwrite=*/true));
    }
};

namespace {

// Enlarged view for permutation strategies: shared X beside the shared block.
struct SharedAugmented final : ColumnSource {
    AugmentedMatrix view;
    SharedAugmented(const ColumnSource& left, MutableColumns& right)
        : view(left, right) {}
    std::size_t rows() const override { return view.rows(); }
    std::size_t cols() const override { return view.cols(); }
    const double* column(std::size_t j) const override { return view.column(j); }
};

// Enlarged view for the fresh strategy: the experiment owns its file.
struct OwnedEnlarged final : ColumnSource {
    StoredMatrix m;
    explicit OwnedEnlarged(StoredMatrix&& stored) : m(std::move(stored)) {}
    std::size_t rows() const override { return m.rows(); }
    std::size_t cols() const override { return m.cols(); }
    const double* column(std::size_t j) const override { return m.column(j); }
};

// Verifies a freshly materialized block digest against the sidecar file,
// writing the sidecar on first materialization.
std::uint64_t reconcile_digest(const std::filesystem::path& path,
                               const BlockDigest& fresh, std::size_t k) {
    if (std::filesystem::exists(path)) {
        const BlockDigest recorded = read_digest_file(path);
        if (!(recorded == fresh))
            throw ReproducibilityError(
                "dummy block for experiment " + std::to_string(k) +
                " does not reproduce its recorded digest (" + path.string() + ")");
    } else {
        write_digest_file(path, fresh);
    }
    return fresh.combined;
}

}  // namespace

OutOfCoreWorkspace::OutOfCoreWorkspace(const std::filesystem::path& x_path,
                                       std::vector<double> centered_y,
                                       const TRexConfig& cfg)
    : y_(std::move(centered_y)) {
    if (cfg.workdir.empty())
        throw ArgumentError("out-of-core runs need a working directory");
    workdir_ = cfg.workdir;
    std::filesystem::create_directories(workdir_);
    impl_ = std::make_unique<Impl>(x_path, cfg, workdir_);
    if (y_.size() != impl_->x.rows())
        throw ArgumentError("response length " + std::to_string(y_.size()) +
                            " != sample count " + std::to_string(impl_->x.rows()));
}

OutOfCoreWorkspace::~OutOfCoreWorkspace() = default;

std::size_t OutOfCoreWorkspace::n() const { return impl_->x.rows(); }
std::size_t OutOfCoreWorkspace::p() const { return impl_->x.cols(); }

ExperimentHandle OutOfCoreWorkspace::prepare_experiment(std::size_t k) {
    if (k < 1 || k > impl_->cfg.K)
        throw ArgumentError("experiment index k out of range [1, K]");
    const TRexConfig& cfg = impl_->cfg;
    const std::size_t n = impl_->x.rows();
    const std::size_t p = impl_->x.cols();

    if (cfg.strategy == StrategyKind::FreshGaussian) {
        const auto path = impl_->enlarged_path(k);
        {
            std::lock_guard<std::mutex> lock(impl_->digest_mutex);
            auto it = impl_->fresh_digests.find(k);
            if (it != impl_->fresh_digests.end() && std::filesystem::exists(path)) {
                auto owned = std::make_unique<OwnedEnlarged>(
                    StoredMatrix::open(path, AccessMode::ReadOnly));
                return ExperimentHandle(std::move(owned), it->second);
            }
        }
        if (!std::filesystem::exists(path)) {
            StoredMatrix enlarged = StoredMatrix::create(path, n, p + cfg.L);
            for (std::size_t j = 0; j < p; ++j)
                std::memcpy(enlarged.column_mut(j), impl_->x.column(j),
                            n * sizeof(double));
            BlockView dummies(enlarged, p, cfg.L);
            fill_fresh_gaussian(dummies, cfg.base_seed, k);
        }
        auto owned = std::make_unique<OwnedEnlarged>(
            StoredMatrix::open(path, AccessMode::ReadOnly));
        BlockView dummies_ro(owned->m, p, cfg.L);
        const std::uint64_t digest =
            reconcile_digest(impl_->digest_path(k), digest_block(dummies_ro), k);
        {
            std::lock_guard<std::mutex> lock(impl_->digest_mutex);
            impl_->fresh_digests[k] = digest;
        }
        return ExperimentHandle(std::move(owned), digest);
    }

    impl_->ensure_reference();
    impl_->ensure_block();
    const DummyStrategy strategy = cfg.dummy_strategy();
    const auto digest_file = impl_->digest_path(k);
    std::uint64_t digest = 0;
    if (std::filesystem::exists(digest_file)) {
        const BlockDigest expected = read_digest_file(digest_file);
        restore_dummy_block(k, *impl_->ref, *impl_->block, strategy, expected);
        digest = expected.combined;
    } else {
        const PermutationPlan plan = build_plan(k, n, cfg.L, strategy);
        apply_permutation(plan, impl_->ref->matrix, *impl_->block);
        const BlockDigest fresh = digest_block(*impl_->block);
        write_digest_file(digest_file, fresh);
        digest = fresh.combined;
    }
    return ExperimentHandle(
        std::make_unique<SharedAugmented>(impl_->x, *impl_->block), digest);
}

void OutOfCoreWorkspace::save_checkpoint(std::size_t k,
                                         std::span<const std::uint8_t> bytes) {
    write_file_bytes(impl_->checkpoint_path(k), bytes);
}

std::optional<std::vector<std::uint8_t>> OutOfCoreWorkspace::load_checkpoint(
    std::size_t k) {
    const auto path = impl_->checkpoint_path(k);
    if (!std::filesystem::exists(path)) return std::nullopt;
    return read_file_bytes(path);
}

void OutOfCoreWorkspace::journal_round(const std::vector<CandidateSet>& round) {
    nlohmann::json doc;
    const auto path = impl_->journal_path();
    if (std::filesystem::exists(path)) {
        const auto bytes = read_file_bytes(path);
        doc = nlohmann::json::parse(bytes.begin(), bytes.end());
    } else {
        doc["rounds"] = nlohmann::json::array();
    }
    nlohmann::json round_json = nlohmann::json::array();
    for (const CandidateSet& cs : round) {
        round_json.push_back({{"k", cs.k},
                              {"T", cs.T},
                              {"path_ended", cs.path_ended},
                              {"members", cs.members}});
    }
    doc["rounds"].push_back(std::move(round_json));
    const std::string text = doc.dump();
    write_file_bytes(path, std::span<const std::uint8_t>(
                               reinterpret_cast<const std::uint8_t*>(text.data()),
                               text.size()));
}

std::vector<std::vector<CandidateSet>> OutOfCoreWorkspace::journal_rounds() const {
    const auto path = impl_->journal_path();
    std::vector<std::vector<CandidateSet>> rounds;
    if (!std::filesystem::exists(path)) return rounds;
    const auto bytes = read_file_bytes(path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception&) {
        return rounds;  // torn write: restart calibration from checkpoints
    }
    if (!doc.contains("rounds")) return rounds;
    for (const auto& round_json : doc["rounds"]) {
        std::vector<CandidateSet> round;
        for (const auto& cs_json : round_json) {
            CandidateSet cs;
            cs.k = cs_json.at("k").get<std::size_t>();
            cs.T = cs_json.at("T").get<std::size_t>();
            cs.path_ended = cs_json.at("path_ended").get<bool>();
            cs.members = cs_json.at("members").get<std::vector<std::uint32_t>>();
            round.push_back(std::move(cs));
        }
        rounds.push_back(std::move(round));
    }
    return rounds;
}

void OutOfCoreWorkspace::clear_run_state() {
    impl_->ref.reset();
    impl_->block.reset();
    {
        std::lock_guard<std::mutex> lock(impl_->digest_mutex);
        impl_->fresh_digests.clear();
    }
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(workdir_, ec)) {
        const std::string name = entry.path().filename().string();
        const bool run_file =
            name == "ref.fbm" || name == "ref.digest" || name == "block.fbm" ||
            name == "progress.json" || name.starts_with("enlarged_k") ||
            name.starts_with("tlars_k") || name.starts_with("dummies_k");
        if (run_file) std::filesystem::remove(entry.path(), ec);
    }
}

// --- in-memory workspace -----------------------------------------------------

struct InMemoryWorkspace::Impl {
    TRexConfig cfg;
    DenseColumns x;
    std::optional<DenseColumns> ref;
    std::unordered_map<std::size_t, std::vector<std::uint8_t>> checkpoints;
    std::unordered_map<std::size_t, BlockDigest> digests;
    std::vector<std::vector<CandidateSet>> journal;

    Impl(const ColumnSource& source, const TRexConfig& config)
        : cfg(config), x(source.rows(), source.cols()) {
        for (std::size_t j = 0; j < source.cols(); ++j)
            std::memcpy(x.column_mut(j), source.column(j),
                        source.rows() * sizeof(double));
    }

    void ensure_reference() {
        if (ref.has_value()) return;
        ref.emplace(x.rows(), cfg.L);
        fill_reference(*ref, reference_seed(cfg.base_seed));
    }
};

namespace {

struct OwnedDense final : ColumnSource {
    DenseColumns m;
    explicit OwnedDense(DenseColumns&& dense) : m(std::move(dense)) {}
    std::size_t rows() const override { return m.rows(); }
    std::size_t cols() const override { return m.cols(); }
    const double* column(std::size_t j) const override { return m.column(j); }
};

}  // namespace

InMemoryWorkspace::InMemoryWorkspace(const ColumnSource& x,
                                     std::vector<double> centered_y,
                                     const TRexConfig& cfg)
    : y_(std::move(centered_y)) {
    impl_ = std::make_unique<Impl>(x, cfg);
    if (y_.size() != impl_->x.rows())
        throw ArgumentError("response length != sample count");
}

InMemoryWorkspace::~InMemoryWorkspace() = default;

std::size_t InMemoryWorkspace::n() const { return impl_->x.rows(); }
std::size_t InMemoryWorkspace::p() const { return impl_->x.cols(); }

ExperimentHandle InMemoryWorkspace::prepare_experiment(std::size_t k) {
    if (k < 1 || k > impl_->cfg.K)
        throw ArgumentError("experiment index k out of range [1, K]");
    const TRexConfig& cfg = impl_->cfg;
    const std::size_t n = impl_->x.rows();
    const std::size_t p = impl_->x.cols();

    DenseColumns enlarged(n, p + cfg.L);
    for (std::size_t j = 0; j < p; ++j)
        std::memcpy(enlarged.column_mut(j), impl_->x.column(j), n * sizeof(double));
    BlockView dummies(enlarged, p, cfg.L);

    if (cfg.strategy == StrategyKind::FreshGaussian) {
        fill_fresh_gaussian(dummies, cfg.base_seed, k);
    } else {
        impl_->ensure_reference();
        const PermutationPlan plan = build_plan(k, n, cfg.L, cfg.dummy_strategy());
        apply_permutation(plan, *impl_->ref, dummies);
    }

    const BlockDigest fresh = digest_block(dummies);
    auto [it, inserted] = impl_->digests.try_emplace(k, fresh);
    if (!inserted && !(it->second == fresh))
        throw ReproducibilityError("in-memory dummy block for experiment " +
                                   std::to_string(k) + " failed to reproduce");
    return ExperimentHandle(std::make_unique<OwnedDense>(std::move(enlarged)),
                            fresh.combined);
}

void InMemoryWorkspace::save_checkpoint(std::size_t k,
                                        std::span<const std::uint8_t> bytes) {
    impl_->checkpoints[k] = std::vector<std::uint8_t>(bytes.begin(), bytes.end());
}

std::optional<std::vector<std::uint8_t>> InMemoryWorkspace::load_checkpoint(
    std::size_t k) {
    auto it = impl_->checkpoints.find(k);
    if (it == impl_->checkpoints.end()) return std::nullopt;
    return it->second;
}

void InMemoryWorkspace::journal_round(const std::vector<CandidateSet>& round) {
    impl_->journal.push_back(round);
}

std::vector<std::vector<CandidateSet>> InMemoryWorkspace::journal_rounds() const {
    return impl_->journal;
}

void InMemoryWorkspace::clear_run_state() {
    impl_->checkpoints.clear();
    impl_->digests.clear();
    impl_->journal.clear();
    impl_->ref.reset();
}

// --- engine ---------------------------------------------------------------------

CandidateSet run_experiment(const TRexConfig& cfg, ExperimentWorkspace& ws,
                            std::size_t k, std::size_t T) {
    if (T < 1) throw ArgumentError("dummy stop count T must be >= 1");
    const ExperimentHandle handle = ws.prepare_experiment(k);
    const CheckpointInfo info{k, cfg.config_hash(ws.n(), ws.p()),
                              handle.block_digest()};

    TLarsState state;
    if (auto bytes = ws.load_checkpoint(k)) {
        state = deserialize_state(*bytes, info);
    } else {
        state = tlars_init(handle.matrix(), ws.y(), ws.p(), cfg.L,
                           TLarsOptions{cfg.lasso_drop});
    }
    run_until_dummies(state, handle.matrix(), T);
    ws.save_checkpoint(k, serialize_state(state, info));

    CandidateSet out;
    out.k = k;
    out.T = T;
    out.members = members_below_p(state);
    out.path_ended = state.terminal;
    return out;
}

namespace {

std::vector<CandidateSet> run_round(const TRexConfig& cfg, ExperimentWorkspace& ws,
                                    std::size_t T) {
    std::vector<CandidateSet> round(cfg.K);
    const std::size_t workers =
        cfg.strategy == StrategyKind::FreshGaussian ? std::min(cfg.jobs, cfg.K) : 1;
    if (workers <= 1) {
        for (std::size_t k = 1; k <= cfg.K; ++k)
            round[k - 1] = run_experiment(cfg, ws, k, T);
        return round;
    }

    std::atomic<std::size_t> next_k{1};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        while (true) {
            const std::size_t k = next_k.fetch_add(1);
            if (k > cfg.K) return;
            try {
                round[k - 1] = run_experiment(cfg, ws, k, T);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return round;
}

bool round_is_complete(const std::vector<CandidateSet>& round, std::size_t K,
                       std::size_t T) {
    if (round.size() != K) return false;
    for (std::size_t k = 1; k <= K; ++k)
        if (round[k - 1].k != k || round[k - 1].T != T) return false;
    return true;
}

}  // namespace

SelectionResult calibrate(const TRexConfig& cfg, ExperimentWorkspace& ws,
                          bool resume) {
    const std::size_t n = ws.n();
    const std::size_t p = ws.p();
    cfg.validate(n, p);
    if (!resume) ws.clear_run_state();

    std::vector<std::vector<CandidateSet>> replay;
    if (resume) {
        replay = ws.journal_rounds();
        // Keep the longest prefix of complete rounds T = 1, 2, ...
        std::size_t keep = 0;
        while (keep < replay.size() &&
               round_is_complete(replay[keep], cfg.K, keep + 1))
            ++keep;
        replay.resize(keep);
    }

    const std::vector<double> grid = voting_grid(cfg.K);
    const std::size_t t_max = cfg.effective_t_max(n);

    SelectionResult result;
    result.phi.n_experiments = cfg.K;
    result.phi.n_variables = p;

    for (std::size_t T = 1; T <= t_max; ++T) {
        std::vector<CandidateSet> round;
        if (T <= replay.size()) {
            round = replay[T - 1];
        } else {
            round = run_round(cfg, ws, T);
            ws.journal_round(round);
        }

        result.phi.counts.push_back(compute_phi_counts(round, cfg.K, T, p));
        const auto& counts = result.phi.counts.back();

        double min_fdp = std::numeric_limits<double>::infinity();
        for (double v : grid) {
            const std::size_t a = select_by_vote(counts, cfg.K, v).size();
            const double fdp = cfg.fdp(a, T, p);
            result.fdp_trace.push_back(FdpTraceEntry{T, v, fdp, a});
            min_fdp = std::min(min_fdp, fdp);
        }

        const bool all_ended = std::all_of(
            round.begin(), round.end(),
            [](const CandidateSet& cs) { return cs.path_ended; });
        if (min_fdp > cfg.alpha || all_ended) break;
    }

    // Winner: most selections among entries within the target level; ties go
    // to the larger voting level, then the smaller dummy count.
    const FdpTraceEntry* best = nullptr;
    for (const FdpTraceEntry& e : result.fdp_trace) {
        if (e.fdp > cfg.alpha) continue;
        if (best == nullptr || e.n_selected > best->n_selected ||
            (e.n_selected == best->n_selected &&
             (e.v > best->v || (e.v == best->v && e.T < best->T))))
            best = &e;
    }
    if (best == nullptr || best->n_selected == 0) {
        result.selected.clear();
        result.v_star = grid.back();
        result.T_star = 1;
        return result;
    }
    result.v_star = best->v;
    result.T_star = best->T;
    result.selected =
        select_by_vote(result.phi.counts[best->T - 1], cfg.K, best->v);
    return result;
}

}  // namespace bigsel
