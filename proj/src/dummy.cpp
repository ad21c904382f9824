#include "bigsel/dummy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "bigsel/counters.hpp"
#include "bigsel/rng.hpp"
#include "bigsel/serialize.hpp"

namespace bigsel {

namespace {

// Stream tags keeping the reference, per-experiment dummies and experiment
// permutations on disjoint substreams of one base seed.
constexpr std::uint64_t kStreamFresh = 0x66726573ULL;  // fresh dummy matrices
constexpr std::uint64_t kStreamPlan = 0x706C616EULL;   // permutation plans

std::vector<std::uint32_t> iota_u32(std::size_t count) {
    std::vector<std::uint32_t> v(count);
    std::iota(v.begin(), v.end(), 0u);
    return v;
}

void check_block_dims(const PermutationPlan& plan, const ColumnSource& ref,
                      const MutableColumns& block) {
    if (ref.rows() != plan.n || ref.cols() != plan.L)
        throw ArgumentError("reference dims (" + std::to_string(ref.rows()) + "x" +
                            std::to_string(ref.cols()) + ") do not match plan (" +
                            std::to_string(plan.n) + "x" + std::to_string(plan.L) + ")");
    if (block.rows() != plan.n || block.cols() != plan.L)
        throw ArgumentError("dummy block dims (" + std::to_string(block.rows()) + "x" +
                            std::to_string(block.cols()) + ") do not match plan (" +
                            std::to_string(plan.n) + "x" + std::to_string(plan.L) + ")");
}

}  // namespace

const char* strategy_name(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::FreshGaussian: return "fresh";
        case StrategyKind::PermuteS1: return "s1";
        case StrategyKind::PermuteS2: return "s2";
    }
    return "?";
}

StrategyKind strategy_from_name(const std::string& name) {
    if (name == "fresh") return StrategyKind::FreshGaussian;
    if (name == "s1") return StrategyKind::PermuteS1;
    if (name == "s2") return StrategyKind::PermuteS2;
    throw ArgumentError("unknown dummy strategy '" + name + "' (fresh|s1|s2)");
}

PermutationPlan build_plan(std::size_t k, std::size_t n, std::size_t L,
                           const DummyStrategy& strategy) {
    if (k < 1) throw ArgumentError("experiment index k must be >= 1");
    if (n < 1 || L < 1) throw ArgumentError("plan dims must be >= 1");

    PermutationPlan plan;
    plan.k = k;
    plan.theta = k;
    plan.kind = strategy.kind;
    plan.n = n;
    plan.L = L;
    plan.base_seed = strategy.base_seed;
    plan.row_perm = iota_u32(n);
    plan.col_perm = iota_u32(L);

    // Experiment 1 uses the reference unchanged.
    if (k == 1 || strategy.kind == StrategyKind::FreshGaussian) return plan;

    rng::Xoshiro256pp gen(
        rng::derive_seed(strategy.base_seed, kStreamPlan + plan.theta));
    rng::fisher_yates(std::span<std::uint32_t>(plan.row_perm), gen);

    if (strategy.kind == StrategyKind::PermuteS1) {
        rng::fisher_yates(std::span<std::uint32_t>(plan.col_perm), gen);
    } else {
        plan.row_seeds.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            plan.row_seeds[i] =
                static_cast<std::uint32_t>(rng::ceil_uniform(gen, n));
    }
    return plan;
}

void fill_reference(MutableColumns& block, std::uint64_t seed) {
    rng::NormalSampler normal(seed);
    const std::size_t n = block.rows();
    for (std::size_t j = 0; j < block.cols(); ++j) {
        double* col = block.column_mut(j);
        for (std::size_t i = 0; i < n; ++i) col[i] = normal.next();
    }
}

DummyReference gen_reference(const std::filesystem::path& path, std::size_t n,
                             std::size_t L, std::uint64_t seed, bool overwrite) {
    if (n < 1 || L < 1) throw ArgumentError("reference dims must be >= 1");
    StoredMatrix m = StoredMatrix::create(path, n, L, overwrite);
    fill_reference(m, seed);
    m.flush();
    return DummyReference{std::move(m), seed};
}

void permute_into(const PermutationPlan& plan, const ColumnSource& ref,
                  MutableColumns& block) {
    check_block_dims(plan, ref, block);
    const std::size_t n = plan.n;
    const std::size_t L = plan.L;

    if (plan.kind == StrategyKind::PermuteS2 && plan.k > 1) {
        // Row-outer traversal: each output row draws its own column shuffle.
        std::vector<std::uint32_t> cols = iota_u32(L);
        std::vector<std::uint32_t> base = cols;
        std::vector<const double*> ref_cols(L);
        std::vector<double*> out_cols(L);
        for (std::size_t j = 0; j < L; ++j) {
            ref_cols[j] = ref.column(j);
            out_cols[j] = block.column_mut(j);
        }
        for (std::size_t i = 0; i < n; ++i) {
            rng::Xoshiro256pp row_gen(plan.row_seeds[i]);
            cols = base;
            rng::fisher_yates(std::span<std::uint32_t>(cols), row_gen);
            const std::size_t src_row = plan.row_perm[i];
            for (std::size_t j = 0; j < L; ++j)
                out_cols[j][i] = ref_cols[cols[j]][src_row];
        }
        return;
    }

    // S1 (and the k = 1 identity copy): column-outer traversal.
    for (std::size_t j = 0; j < L; ++j) {
        const double* src = ref.column(plan.col_perm[j]);
        double* dst = block.column_mut(j);
        for (std::size_t i = 0; i < n; ++i) dst[i] = src[plan.row_perm[i]];
    }
}

std::vector<ColumnStats> apply_permutation(const PermutationPlan& plan,
                                           const ColumnSource& ref,
                                           MutableColumns& block) {
    // Column-outer strategies gather, standardize and store one column at a
    // time in a hot buffer; arithmetic order matches standardize_columns
    // exactly, so both routes produce bit-identical blocks.
    if (plan.kind != StrategyKind::PermuteS2 || plan.k == 1) {
        check_block_dims(plan, ref, block);
        const std::size_t n = plan.n;
        if (n < 2) throw ArgumentError("standardization needs at least 2 rows");
        std::vector<double> buf(n);
        std::vector<ColumnStats> stats;
        stats.reserve(plan.L);
        for (std::size_t j = 0; j < plan.L; ++j) {
            const double* src = ref.column(plan.col_perm[j]);
            for (std::size_t i = 0; i < n; ++i) buf[i] = src[plan.row_perm[i]];
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) sum += buf[i];
            const double mean = sum / static_cast<double>(n);
            double ss = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = buf[i] - mean;
                ss += d * d;
            }
            const double sd = std::sqrt(ss / static_cast<double>(n - 1));
            if (sd < 1e-12)
                throw DegenerateColumn(j, "column " + std::to_string(j) +
                                              " is constant (sd < 1e-12)");
            const double inv = 1.0 / sd;
            double* dst = block.column_mut(j);
            for (std::size_t i = 0; i < n; ++i) dst[i] = (buf[i] - mean) * inv;
            stats.push_back(ColumnStats{mean, sd});
        }
        return stats;
    }
    permute_into(plan, ref, block);
    return standardize_columns(block);
}

std::vector<ColumnStats> fill_fresh_gaussian(MutableColumns& block,
                                             std::uint64_t base_seed,
                                             std::size_t k) {
    if (k < 1) throw ArgumentError("experiment index k must be >= 1");
    rng::NormalSampler normal(rng::derive_seed(base_seed, kStreamFresh + k));
    const std::size_t n = block.rows();
    for (std::size_t j = 0; j < block.cols(); ++j) {
        double* col = block.column_mut(j);
        for (std::size_t i = 0; i < n; ++i) col[i] = normal.next();
    }
    return standardize_columns(block);
}

std::uint64_t column_digest(const double* col, std::size_t n) {
    // FNV-style word mix over the raw bit patterns, one multiply per entry.
    std::uint64_t h = kFnvOffset;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= std::bit_cast<std::uint64_t>(col[i]);
        h *= kFnvPrime;
    }
    return h;
}

BlockDigest digest_block(const ColumnSource& block) {
    BlockDigest d;
    d.per_column.resize(block.cols());
    std::uint64_t combined = kFnvOffset;
    for (std::size_t j = 0; j < block.cols(); ++j) {
        d.per_column[j] = column_digest(block.column(j), block.rows());
        combined = fnv1a64_u64(d.per_column[j], combined);
    }
    d.combined = combined;
    return d;
}

namespace {
constexpr char kDigestMagic[9] = "BIGSELDG";
}

void write_digest_file(const std::filesystem::path& path, const BlockDigest& d) {
    ByteWriter w;
    w.bytes(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(kDigestMagic), 8));
    w.u64(d.combined);
    w.u64_vec(d.per_column);
    write_file_bytes(path, w.buffer());
}

BlockDigest read_digest_file(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    char magic[8];
    for (auto& c : magic) c = static_cast<char>(r.u8());
    if (std::memcmp(magic, kDigestMagic, 8) != 0)
        throw FormatError("not a digest file: " + path.string());
    BlockDigest d;
    d.combined = r.u64();
    d.per_column = r.u64_vec();
    return d;
}

void restore_dummy_block(std::size_t k, const DummyReference& ref,
                         MutableColumns& block, const DummyStrategy& strategy,
                         const BlockDigest& expected) {
    if (strategy.kind == StrategyKind::FreshGaussian)
        throw ArgumentError("restore_dummy_block applies to permutation strategies; "
                            "fresh dummy matrices persist on their own storage");
    const PermutationPlan plan = build_plan(k, ref.matrix.rows(), strategy.L, strategy);
    apply_permutation(plan, ref.matrix, block);
    const BlockDigest actual = digest_block(block);
    if (!(actual == expected))
        throw ReproducibilityError(
            "restored dummy block for experiment " + std::to_string(k) +
            " does not match its recorded digest; the reference matrix, seed or "
            "strategy differs from the original materialization");
}

QqReport qq_alignment(const DummyReference& ref,
                      std::span<const std::size_t> k_list,
                      const DummyStrategy& strategy) {
    if (k_list.empty()) throw ArgumentError("qq_alignment needs at least one k");
    const std::size_t n = ref.matrix.rows();
    const std::size_t L = ref.matrix.cols();

    // Standardized copy of the reference, the fixed left factor of both Grams.
    DenseColumns left_view(n, L);
    for (std::size_t j = 0; j < L; ++j)
        std::copy_n(ref.matrix.column(j), n, left_view.column_mut(j));
    standardize_columns(left_view);

    auto cross_gram_sorted = [&](const ColumnSource& right) {
        std::vector<double> entries;
        entries.reserve(L * L);
        for (std::size_t a = 0; a < L; ++a) {
            const double* la = left_view.column(a);
            for (std::size_t b = 0; b < L; ++b) {
                const double* rb = right.column(b);
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += la[i] * rb[i];
                entries.push_back(dot);
            }
        }
        std::sort(entries.begin(), entries.end());
        return entries;
    };

    QqReport report;
    DenseColumns block(n, L);
    for (std::size_t k : k_list) {
        if (k < 2)
            throw ArgumentError("qq_alignment compares permuted experiments, k >= 2");
        const PermutationPlan plan = build_plan(k, n, L, strategy);
        apply_permutation(plan, ref.matrix, block);
        auto permuted_q = cross_gram_sorted(block);

        fill_fresh_gaussian(block, strategy.base_seed, k);
        auto fresh_q = cross_gram_sorted(block);

        const std::size_t count = permuted_q.size();
        const std::size_t lo = static_cast<std::size_t>(0.05 * static_cast<double>(count));
        const std::size_t hi = static_cast<std::size_t>(0.95 * static_cast<double>(count));
        const double scale = fresh_q[hi] - fresh_q[lo];
        double worst = 0.0;
        for (std::size_t i = lo; i <= hi && i < count; ++i)
            worst = std::max(worst, std::abs(permuted_q[i] - fresh_q[i]));
        const double dev = scale > 0.0 ? worst / scale : worst;

        report.per_experiment.push_back(QqReport::PerExperiment{
            k, dev, std::move(permuted_q), std::move(fresh_q)});
        report.max_bulk_deviation = std::max(report.max_bulk_deviation, dev);
    }
    return report;
}

void write_qq_csv(const std::filesystem::path& path, const QqReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw StorageError("cannot write " + path.string());
    out << "k,permuted_quantile,fresh_quantile\n";
    for (const auto& per : report.per_experiment) {
        for (std::size_t i = 0; i < per.permuted_quantiles.size(); ++i)
            out << per.k << ',' << per.permuted_quantiles[i] << ','
                << per.fresh_quantiles[i] << '\n';
    }
    if (!out) throw StorageError("short write to " + path.string());
}

}  // namespace bigsel
