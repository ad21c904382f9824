#ifndef BIGSEL_TREX_HPP
#define BIGSEL_TREX_HPP

// Calibrate-and-fuse selection engine. Runs K early-terminated random
// experiments against dummy-enlarged designs, fuses their candidate sets into
// per-variable relative occurrence fractions, estimates the false discovery
// proportion over a voting grid, and raises the dummy stop count T until the
// estimate crosses the target level. The winning (voting level, dummy count)
// pair maximizes the number of selected variables among all recorded pairs
// whose estimate stays within the target.
//
// Every run is a pure function of (data, config): experiments resume from
// checkpoints rather than recomputing, and interrupted calibrations replay
// from a journal without changing a single output byte.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "bigsel/dummy.hpp"
#include "bigsel/matstore.hpp"
#include "bigsel/tlars.hpp"

namespace bigsel {

// Estimated fraction of false discoveries among `n_selected` variables when
// T dummies out of L have entered. Pluggable so a differently calibrated
// estimator can replace the default without touching the calibration loop.
using FdpEstimator = std::function<double(
    std::size_t n_selected, std::size_t T, std::size_t L, std::size_t p)>;

// Conservative default: treats the p - |selected| unselected variables as
// nulls, each as likely as a dummy to slip in before the T-th dummy, giving
// an expected T/(L-T+1) false entries per remaining null. Empty selections
// estimate 0.
double default_fdp_estimator(std::size_t n_selected, std::size_t T,
                             std::size_t L, std::size_t p);

struct TRexConfig {
    double alpha = 0.1;
    std::size_t K = 20;
    std::size_t L = 0;
    StrategyKind strategy = StrategyKind::FreshGaussian;
    std::uint64_t base_seed = 0;
    std::size_t T_max = 0;  // 0: default min(L, ceil(n/2))
    std::filesystem::path workdir;  // dummy storage + checkpoints (out-of-core)
    std::size_t jobs = 1;   // concurrent experiments; >1 only for FreshGaussian
    bool lasso_drop = false;
    FdpEstimator fdp_estimator;  // empty: default_fdp_estimator

    void validate(std::size_t n, std::size_t p) const;
    std::size_t effective_t_max(std::size_t n) const;
    std::uint64_t config_hash(std::size_t n, std::size_t p) const;
    DummyStrategy dummy_strategy() const { return DummyStrategy{strategy, L, base_seed}; }
    double fdp(std::size_t n_selected, std::size_t T, std::size_t p) const;
};

// One experiment's surviving candidates: the active set when the T-th dummy
// entered (or the path ended), with the dummies removed.
struct CandidateSet {
    std::size_t k = 0;
    std::size_t T = 0;
    std::vector<std::uint32_t> members;  // sorted, all < p
    bool path_ended = false;             // solver hit its terminal state
};

// Relative occurrences as integer selection counts; fractions only at the
// boundary so equality against grid levels stays exact.
struct RelOccurrenceTable {
    std::size_t n_experiments = 0;  // K
    std::size_t n_variables = 0;    // p
    std::vector<std::vector<std::uint32_t>> counts;  // counts[T-1][j]

    double phi(std::size_t T, std::size_t j) const;  // T = 0 reads as 0
};

std::vector<std::uint32_t> compute_phi_counts(std::span<const CandidateSet> sets,
                                              std::size_t K, std::size_t T,
                                              std::size_t p);

// Voting levels {1/2, 1/2 + 1/K, ..., <= 1 - 1/K}; all are multiples of
// 1/(2K), which select_by_vote exploits for exact strict comparisons.
std::vector<double> voting_grid(std::size_t K);

// { j : counts[j]/K > v } under exact rational comparison.
std::vector<std::uint32_t> select_by_vote(std::span<const std::uint32_t> counts,
                                          std::size_t K, double v);

double estimate_fdp(std::span<const std::uint32_t> counts, std::size_t K,
                    double v, std::size_t T, std::size_t L, std::size_t p,
                    const FdpEstimator& estimator = {});

struct FdpTraceEntry {
    std::size_t T = 0;
    double v = 0.0;
    double fdp = 0.0;
    std::size_t n_selected = 0;
};

struct SelectionResult {
    std::vector<std::uint32_t> selected;
    double v_star = 0.0;
    std::size_t T_star = 1;
    std::vector<FdpTraceEntry> fdp_trace;
    RelOccurrenceTable phi;
};

// --- experiment workspaces ---------------------------------------------------

// Everything one experiment needs: the enlarged column view and the digest of
// its freshly materialized/restored dummy block. Owns its backing handles so
// concurrent experiments do not alias.
class ExperimentHandle {
public:
    ExperimentHandle(std::unique_ptr<ColumnSource> owner, std::uint64_t digest)
        : owner_(std::move(owner)), digest_(digest) {}
    const ColumnSource& matrix() const { return *owner_; }
    std::uint64_t block_digest() const { return digest_; }

private:
    std::unique_ptr<ColumnSource> owner_;
    std::uint64_t digest_;
};

class ExperimentWorkspace {
public:
    virtual ~ExperimentWorkspace() = default;
    virtual std::size_t n() const = 0;
    virtual std::size_t p() const = 0;
    virtual std::span<const double> y() const = 0;

    virtual ExperimentHandle prepare_experiment(std::size_t k) = 0;

    virtual void save_checkpoint(std::size_t k, std::span<const std::uint8_t> bytes) = 0;
    virtual std::optional<std::vector<std::uint8_t>> load_checkpoint(std::size_t k) = 0;

    // Calibration journal: one entry per completed T round.
    virtual void journal_round(const std::vector<CandidateSet>& round) = 0;
    virtual std::vector<std::vector<CandidateSet>> journal_rounds() const = 0;

    // Removes checkpoints, digests, journal and materialized dummy storage.
    virtual void clear_run_state() = 0;
};

// Disk-backed workspace: X is a read-only stored matrix; dummy storage,
// checkpoints, digests and the journal live under the working directory.
class OutOfCoreWorkspace final : public ExperimentWorkspace {
public:
    OutOfCoreWorkspace(const std::filesystem::path& x_path,
                       std::vector<double> centered_y, const TRexConfig& cfg);
    ~OutOfCoreWorkspace() override;

    std::size_t n() const override;
    std::size_t p() const override;
    std::span<const double> y() const override { return y_; }

    ExperimentHandle prepare_experiment(std::size_t k) override;
    void save_checkpoint(std::size_t k, std::span<const std::uint8_t> bytes) override;
    std::optional<std::vector<std::uint8_t>> load_checkpoint(std::size_t k) override;
    void journal_round(const std::vector<CandidateSet>& round) override;
    std::vector<std::vector<CandidateSet>> journal_rounds() const override;
    void clear_run_state() override;

    const std::filesystem::path& workdir() const { return workdir_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::vector<double> y_;
    std::filesystem::path workdir_;
};

// Dense reference workspace: X and every enlarged design live in RAM, dummy
// content is regenerated from seeds instead of persisted, checkpoints and the
// journal are kept in process memory. Same sampling, same arithmetic, no
// disk; this is the baseline the out-of-core pipeline must match exactly.
class InMemoryWorkspace final : public ExperimentWorkspace {
public:
    InMemoryWorkspace(const ColumnSource& x, std::vector<double> centered_y,
                      const TRexConfig& cfg);
    ~InMemoryWorkspace() override;

    std::size_t n() const override;
    std::size_t p() const override;
    std::span<const double> y() const override { return y_; }

    ExperimentHandle prepare_experiment(std::size_t k) override;
    void save_checkpoint(std::size_t k, std::span<const std::uint8_t> bytes) override;
    std::optional<std::vector<std::uint8_t>> load_checkpoint(std::size_t k) override;
    void journal_round(const std::vector<CandidateSet>& round) override;
    std::vector<std::vector<CandidateSet>> journal_rounds() const override;
    void clear_run_state() override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::vector<double> y_;
};

// --- engine -------------------------------------------------------------------

// Runs (or resumes) experiment k up to dummy count T: restores the dummy
// block and any checkpoint, steps the solver, snapshots, and returns the
// candidate set with dummies removed. Digest mismatches abort the run; a
// block is never silently regenerated under a different identity.
CandidateSet run_experiment(const TRexConfig& cfg, ExperimentWorkspace& ws,
                            std::size_t k, std::size_t T);

// Full calibration loop. With `resume`, previously journaled rounds are
// replayed instead of recomputed; the result is byte-identical either way.
SelectionResult calibrate(const TRexConfig& cfg, ExperimentWorkspace& ws,
                          bool resume = false);

}  // namespace bigsel

#endif
