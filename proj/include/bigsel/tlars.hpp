#ifndef BIGSEL_TLARS_HPP
#define BIGSEL_TLARS_HPP

// Early-terminating least-angle regression over streamed matrix columns.
//
// The solver walks the LARS path on an enlarged design [X | dummies], reading
// one column at a time through a ColumnSource, and supports stopping the
// first time a requested number of dummy columns has entered the active set.
// The full solver state ("indices and vectors") serializes to a compact
// checkpoint so an experiment can be resumed later, against the restored
// matrix, with a path that is bit-identical to an uninterrupted run.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bigsel/matstore.hpp"

namespace bigsel {

// Shared absolute-correlation agreement required of the active set.
inline constexpr double kEquiangularTol = 1e-8;
// Correlation ties closer than this resolve to the lowest column index.
inline constexpr double kCorrTieTol = 1e-12;

struct TLarsOptions {
    // Lasso modification: drop a variable whose coefficient crosses zero.
    // Off by default; the default path mode is plain LARS.
    bool lasso_drop = false;
};

struct TLarsState {
    static constexpr std::size_t kNoColumn = static_cast<std::size_t>(-1);

    std::size_t p = 0;  // original variables; columns >= p are dummies
    std::size_t L = 0;

    std::vector<std::size_t> active;  // entry order
    std::vector<std::int8_t> signs;
    std::vector<double> coeffs;       // path coefficients, per active column
    std::vector<double> residual;     // y - X~ beta, length n
    std::vector<double> chol;         // packed lower Cholesky of signed Gram
    std::vector<std::size_t> excluded;  // flagged collinear candidates

    std::size_t step_index = 0;
    std::size_t n_dummies_active = 0;
    std::size_t next_col = kNoColumn;  // tying column scheduled to enter
    double residual_norm = 0.0;
    bool terminal = false;
    bool lasso_drop = false;

    // Transient membership flags over [0, p+L); derived from active/excluded,
    // never serialized. Built lazily on first mutation.
    std::vector<std::uint8_t> member_flags;

    std::size_t max_active(std::size_t n) const {
        const std::size_t width = p + L;
        return std::min(n > 0 ? n - 1 : 0, width);
    }
};

// Validates dims, requires centered y (|mean| <= 1e-10), computes the initial
// correlations by streaming columns and schedules the first entering column.
// A zero response yields an immediately terminal state.
TLarsState tlars_init(const ColumnSource& xt, std::span<const double> y,
                      std::size_t p, std::size_t L, TLarsOptions options = {});

// One LARS step: the scheduled column enters (collinear candidates are
// flagged and skipped, not jittered), the equiangular direction of the active
// set is computed, and the path advances by the standard step length until
// the next column ties. Throws SingularGram if the established active Gram
// loses positive definiteness.
void tlars_step(TLarsState& state, const ColumnSource& xt);

// Steps until n_dummies_active == T or the path ends. Requires T >= 1 and
// T >= state.n_dummies_active.
void run_until_dummies(TLarsState& state, const ColumnSource& xt, std::size_t T);

// --- checkpointing ----------------------------------------------------------

struct CheckpointInfo {
    std::size_t k = 0;               // experiment index
    std::uint64_t config_hash = 0;   // hash of (n, p, L, strategy, seed, alpha, K)
    std::uint64_t block_digest = 0;  // combined digest of the dummy block
};

std::vector<std::uint8_t> serialize_state(const TLarsState& state,
                                          const CheckpointInfo& info);
TLarsState deserialize_state(std::span<const std::uint8_t> bytes,
                             const CheckpointInfo& expected);

void snapshot(const TLarsState& state, const CheckpointInfo& info,
              const std::filesystem::path& path);
// Restores a state previously snapshot to `path`. The caller passes the
// digest of the dummy block it has just restored; a mismatch with the digest
// recorded in the checkpoint raises ReproducibilityError.
TLarsState restore(const std::filesystem::path& path, const CheckpointInfo& expected);

}  // namespace bigsel

#endif
