#ifndef BIGSEL_DUMMY_HPP
#define BIGSEL_DUMMY_HPP

// Dummy-variable generation for the random experiments. Two families:
//
//   - FreshGaussian: experiment k gets its own standard-normal matrix, seeded
//     from (base_seed, k), so the K matrices are mutually independent yet
//     reproducible.
//   - PermuteS1 / PermuteS2: a single stored reference matrix is permuted
//     per experiment with seeded index shuffles, so one disk-resident block
//     stands in for K independent matrices. S1 shuffles rows and columns once
//     (column-outer traversal); S2 additionally re-permutes the columns of
//     every output row under a per-row seed (row-outer traversal).
//
// Every materialization is a pure function of (k, n, L, strategy, base_seed)
// and can therefore be restored bit-exactly; per-column digests recorded at
// materialization time make restores cheap to verify.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bigsel/matstore.hpp"

namespace bigsel {

enum class StrategyKind : std::uint8_t {
    FreshGaussian = 0,
    PermuteS1 = 1,
    PermuteS2 = 2,
};

const char* strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(const std::string& name);

struct DummyStrategy {
    StrategyKind kind = StrategyKind::FreshGaussian;
    std::size_t L = 1;
    std::uint64_t base_seed = 0;
};

// Seed bundle realizing one experiment's permutation. row_perm[i] is the
// reference row feeding output row i; col_perm likewise for columns (S1).
// For S2, row_seeds[i] in {1, ..., n} seeds output row i's column shuffle,
// which is generated on the fly during application.
struct PermutationPlan {
    std::size_t k = 1;
    std::uint64_t theta = 1;  // generator seed tag; equals k
    StrategyKind kind = StrategyKind::PermuteS1;
    std::size_t n = 0;
    std::size_t L = 0;
    std::uint64_t base_seed = 0;
    std::vector<std::uint32_t> row_perm;
    std::vector<std::uint32_t> col_perm;    // S1 only (identity for k = 1)
    std::vector<std::uint32_t> row_seeds;   // S2 only, values in [1, n]
};

PermutationPlan build_plan(std::size_t k, std::size_t n, std::size_t L,
                           const DummyStrategy& strategy);

// The stored reference matrix (n x L, i.i.d. standard normal, unscaled).
struct DummyReference {
    StoredMatrix matrix;
    std::uint64_t seed = 0;
};

DummyReference gen_reference(const std::filesystem::path& path, std::size_t n,
                             std::size_t L, std::uint64_t seed,
                             bool overwrite = false);

// Same sampling as gen_reference but into an existing block (file or RAM),
// so both storage forms hold bit-identical reference entries.
void fill_reference(MutableColumns& block, std::uint64_t seed);

// Fills `block` (n x L) with the raw permuted copy of `ref` (k = 1 copies
// unchanged). Traversal is column-outer for S1, row-outer for S2.
void permute_into(const PermutationPlan& plan, const ColumnSource& ref,
                  MutableColumns& block);

// permute_into followed by per-column standardization of the block.
std::vector<ColumnStats> apply_permutation(const PermutationPlan& plan,
                                           const ColumnSource& ref,
                                           MutableColumns& block);

// FreshGaussian materialization for experiment k: i.i.d. N(0,1) entries from
// seed derive_seed(base_seed, k), then per-column standardization.
std::vector<ColumnStats> fill_fresh_gaussian(MutableColumns& block,
                                             std::uint64_t base_seed,
                                             std::size_t k);

// --- content digests -------------------------------------------------------

struct BlockDigest {
    std::vector<std::uint64_t> per_column;
    std::uint64_t combined = 0;

    bool operator==(const BlockDigest&) const = default;
};

std::uint64_t column_digest(const double* col, std::size_t n);
BlockDigest digest_block(const ColumnSource& block);

void write_digest_file(const std::filesystem::path& path, const BlockDigest& d);
BlockDigest read_digest_file(const std::filesystem::path& path);

// Re-materializes experiment k's dummy block (permutation strategies only)
// and verifies the result against `expected`. Throws ReproducibilityError if
// the rebuilt block does not match, e.g. under a wrong base seed.
void restore_dummy_block(std::size_t k, const DummyReference& ref,
                         MutableColumns& block, const DummyStrategy& strategy,
                         const BlockDigest& expected);

// --- statistical validity check --------------------------------------------

// Compares the empirical quantiles of ref' * Pi_k(ref) (permuted dummies, as
// the permutation strategies use them) against those of ref' * Xk with fresh
// i.i.d. Gaussian Xk (as the fresh-dummy mode uses them). Both sides are
// standardized before the cross-Gram. The bulk deviation is the largest
// absolute quantile gap across the 5th-95th percentile band, scaled by the
// fresh side's 5-95 interquantile range.
struct QqReport {
    struct PerExperiment {
        std::size_t k = 0;
        double bulk_deviation = 0.0;
        std::vector<double> permuted_quantiles;  // sorted, length L^2
        std::vector<double> fresh_quantiles;     // sorted, length L^2
    };
    std::vector<PerExperiment> per_experiment;
    double max_bulk_deviation = 0.0;
};

QqReport qq_alignment(const DummyReference& ref,
                      std::span<const std::size_t> k_list,
                      const DummyStrategy& strategy);

void write_qq_csv(const std::filesystem::path& path, const QqReport& report);

}  // namespace bigsel

#endif
