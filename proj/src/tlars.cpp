#include "bigsel/tlars.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "bigsel/counters.hpp"
#include "bigsel/serialize.hpp"

namespace bigsel {

namespace {

constexpr double kZeroCorrTol = 1e-12;     // residual effectively orthogonal
constexpr double kSingularRelTol = 1e-10;  // bordered-pivot collinearity cutoff
constexpr double kGammaTol = 1e-12;

// Four-lane dot product; the fixed lane structure keeps results identical
// for any backend serving the same column values.
double dot_n(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

// Simultaneous x'b and x'c for one streamed column.
void dot2_n(const double* x, const double* b, const double* c, std::size_t n,
            double& xb, double& xc) {
    double p0 = 0.0, p1 = 0.0, q0 = 0.0, q1 = 0.0;
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        p0 += x[i] * b[i];
        q0 += x[i] * c[i];
        p1 += x[i + 1] * b[i + 1];
        q1 += x[i + 1] * c[i + 1];
    }
    for (; i < n; ++i) {
        p0 += x[i] * b[i];
        q0 += x[i] * c[i];
    }
    xb = p0 + p1;
    xc = q0 + q1;
}

// Packed row-major lower triangular access: row r holds r+1 entries.
inline std::size_t tri_index(std::size_t r, std::size_t c) {
    return r * (r + 1) / 2 + c;
}

// Solves L z = b in place (forward substitution), L packed, size a.
void forward_solve(const std::vector<double>& L, std::size_t a, std::vector<double>& z) {
    for (std::size_t r = 0; r < a; ++r) {
        double s = z[r];
        const double* row = L.data() + tri_index(r, 0);
        for (std::size_t c = 0; c < r; ++c) s -= row[c] * z[c];
        z[r] = s / row[r];
    }
}

// Solves L' w = z in place (back substitution on the transpose).
void backward_solve(const std::vector<double>& L, std::size_t a, std::vector<double>& w) {
    for (std::size_t r = a; r-- > 0;) {
        double s = w[r];
        for (std::size_t c = r + 1; c < a; ++c) s -= L[tri_index(c, r)] * w[c];
        w[r] = s / L[tri_index(r, r)];
    }
}

void ensure_member_flags(TLarsState& st) {
    if (st.member_flags.size() == st.p + st.L) return;
    st.member_flags.assign(st.p + st.L, 0);
    counters::count_alloc(st.member_flags.size());
    for (std::size_t idx : st.active) st.member_flags[idx] = 1;
    for (std::size_t idx : st.excluded) st.member_flags[idx] = 1;
}

void mark_member(TLarsState& st, std::size_t j) {
    ensure_member_flags(st);
    st.member_flags[j] = 1;
}

inline bool is_member(const TLarsState& st, std::size_t j) {
    return st.member_flags[j] != 0;
}

// Largest |x_j' r| over unflagged columns; ties within kCorrTieTol resolve to
// the lowest index. Returns kNoColumn when nothing correlates above noise.
std::size_t argmax_correlation(const TLarsState& st, const ColumnSource& xt) {
    const std::size_t n = xt.rows();
    const double* r = st.residual.data();
    double best = kZeroCorrTol;
    std::size_t best_j = TLarsState::kNoColumn;
    for (std::size_t j = 0; j < xt.cols(); ++j) {
        if (is_member(st, j)) continue;
        const double c = std::abs(dot_n(xt.column(j), r, n));
        if (c > best + kCorrTieTol) {
            best = c;
            best_j = j;
        }
    }
    return best_j;
}

// Appends column j (with sign s) to the active set via a bordered Cholesky
// update. Returns false (leaving the state untouched) when the candidate is
// numerically collinear with the active set.
bool try_enter(TLarsState& st, const ColumnSource& xt, std::size_t j, std::int8_t s) {
    const std::size_t n = xt.rows();
    const std::size_t a = st.active.size();
    const double* xj = xt.column(j);

    std::vector<double> l(a);
    for (std::size_t i = 0; i < a; ++i) {
        const double raw = dot_n(xj, xt.column(st.active[i]), n);
        l[i] = static_cast<double>(s) * static_cast<double>(st.signs[i]) * raw;
    }
    const double gjj = dot_n(xj, xj, n);

    forward_solve(st.chol, a, l);
    double d = gjj;
    for (std::size_t i = 0; i < a; ++i) d -= l[i] * l[i];
    if (!(d > kSingularRelTol * gjj)) return false;

    for (std::size_t i = 0; i < a; ++i) st.chol.push_back(l[i]);
    st.chol.push_back(std::sqrt(d));
    st.active.push_back(j);
    st.signs.push_back(s);
    st.coeffs.push_back(0.0);
    mark_member(st, j);
    if (j >= st.p) ++st.n_dummies_active;
    return true;
}

// Removes active position t from the packed factor by QR deletion: drop row
// t, then rotate adjacent column pairs to clear the resulting bulge. The
// rotated factor reproduces the reduced Gram exactly.
void cholesky_downdate(std::vector<double>& chol, std::size_t a, std::size_t t) {
    const std::size_t m = a - t - 1;  // rows below the deleted one
    std::vector<double> scratch(m * a, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
        const std::size_t old_r = t + 1 + r;
        for (std::size_t c = 0; c <= old_r; ++c)
            scratch[r * a + c] = chol[tri_index(old_r, c)];
    }
    for (std::size_t jcol = t; jcol + 1 < a; ++jcol) {
        const std::size_t pivot = jcol - t;  // scratch row whose bulge is at jcol+1
        const double f = scratch[pivot * a + jcol];
        const double g = scratch[pivot * a + jcol + 1];
        const double h = std::hypot(f, g);
        if (h == 0.0) continue;
        const double cs = f / h;
        const double sn = g / h;
        for (std::size_t r = pivot; r < m; ++r) {
            double& x = scratch[r * a + jcol];
            double& y = scratch[r * a + jcol + 1];
            const double nx = cs * x + sn * y;
            const double ny = cs * y - sn * x;
            x = nx;
            y = ny;
        }
    }
    std::vector<double> packed;
    packed.reserve(a * (a + 1) / 2);
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t c = 0; c <= r; ++c) packed.push_back(chol[tri_index(r, c)]);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c <= t + r; ++c) packed.push_back(scratch[r * a + c]);
    chol = std::move(packed);
}

}  // namespace

TLarsState tlars_init(const ColumnSource& xt, std::span<const double> y,
                      std::size_t p, std::size_t L, TLarsOptions options) {
    const std::size_t n = xt.rows();
    if (y.size() != n)
        throw ArgumentError("response length " + std::to_string(y.size()) +
                            " != matrix rows " + std::to_string(n));
    if (p + L != xt.cols())
        throw ArgumentError("p + L = " + std::to_string(p + L) +
                            " does not match matrix width " + std::to_string(xt.cols()));
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);
    if (std::abs(mean) > 1e-10)
        throw ArgumentError("response must be centered (|mean| = " +
                            std::to_string(std::abs(mean)) + " > 1e-10)");

    TLarsState st;
    st.p = p;
    st.L = L;
    st.lasso_drop = options.lasso_drop;
    st.residual.assign(y.begin(), y.end());
    counters::count_alloc(st.residual.size() * sizeof(double));
    st.residual_norm = std::sqrt(dot_n(st.residual.data(), st.residual.data(), n));

    ensure_member_flags(st);
    st.next_col = argmax_correlation(st, xt);
    if (st.next_col == TLarsState::kNoColumn) st.terminal = true;
    return st;
}

void tlars_step(TLarsState& st, const ColumnSource& xt) {
    if (st.terminal) throw ArgumentError("tlars_step on a terminal state");
    const std::size_t n = xt.rows();
    ensure_member_flags(st);

    // --- entry ----------------------------------------------------------------
    if (st.next_col == TLarsState::kNoColumn)
        st.next_col = argmax_correlation(st, xt);
    if (st.next_col == TLarsState::kNoColumn) {
        st.terminal = true;
        return;
    }
    const std::size_t entering = st.next_col;
    st.next_col = TLarsState::kNoColumn;
    {
        const double c_enter = dot_n(xt.column(entering), st.residual.data(), n);
        if (std::abs(c_enter) <= kZeroCorrTol) {
            st.terminal = true;
            return;
        }
        const std::int8_t s = c_enter >= 0.0 ? std::int8_t{1} : std::int8_t{-1};
        if (!try_enter(st, xt, entering, s)) {
            // Collinear with the active set: flag and skip; the next step
            // picks the runner-up. Jittering would break resume determinism.
            st.excluded.push_back(entering);
            mark_member(st, entering);
            return;
        }
    }

    // --- equiangular direction --------------------------------------------------
    const std::size_t a = st.active.size();
    std::vector<double> w(a, 1.0);
    forward_solve(st.chol, a, w);
    backward_solve(st.chol, a, w);
    double sum_w = 0.0;
    for (double v : w) sum_w += v;
    if (!(sum_w > 0.0) || !std::isfinite(sum_w))
        throw SingularGram(st.active, "active Gram lost positive definiteness");
    const double norm_a = 1.0 / std::sqrt(sum_w);

    std::vector<double> u(n, 0.0);
    double shared_corr = 0.0;
    for (std::size_t i = 0; i < a; ++i) {
        const double* xi = xt.column(st.active[i]);
        shared_corr = std::max(shared_corr, std::abs(dot_n(xi, st.residual.data(), n)));
        const double coef = norm_a * w[i] * static_cast<double>(st.signs[i]);
        for (std::size_t r = 0; r < n; ++r) u[r] += coef * xi[r];
    }
    const double big_c = shared_corr;

    // --- step length --------------------------------------------------------------
    const double gamma_full = big_c / norm_a;
    double gamma = gamma_full;
    std::size_t tying = TLarsState::kNoColumn;
    if (a < st.max_active(n)) {
        for (std::size_t j = 0; j < xt.cols(); ++j) {
            if (is_member(st, j)) continue;
            double cj, aj;
            dot2_n(xt.column(j), st.residual.data(), u.data(), n, cj, aj);
            const double d1 = norm_a - aj;
            if (d1 > kGammaTol) {
                const double t = (big_c - cj) / d1;
                if (t > kGammaTol && t < gamma - kGammaTol) {
                    gamma = t;
                    tying = j;
                }
            }
            const double d2 = norm_a + aj;
            if (d2 > kGammaTol) {
                const double t = (big_c + cj) / d2;
                if (t > kGammaTol && t < gamma - kGammaTol) {
                    gamma = t;
                    tying = j;
                }
            }
        }
    }

    // --- lasso modification ---------------------------------------------------------
    std::size_t drop_pos = TLarsState::kNoColumn;
    if (st.lasso_drop) {
        for (std::size_t i = 0; i < a; ++i) {
            const double dir = norm_a * w[i] * static_cast<double>(st.signs[i]);
            if (std::abs(dir) <= kGammaTol) continue;
            const double t = -st.coeffs[i] / dir;
            if (t > kGammaTol && t < gamma - kGammaTol) {
                gamma = t;
                drop_pos = i;
                tying = TLarsState::kNoColumn;
            }
        }
    }

    // --- move -----------------------------------------------------------------------
    for (std::size_t i = 0; i < a; ++i)
        st.coeffs[i] += gamma * norm_a * w[i] * static_cast<double>(st.signs[i]);
    for (std::size_t r = 0; r < n; ++r) st.residual[r] -= gamma * u[r];
    st.residual_norm = std::sqrt(dot_n(st.residual.data(), st.residual.data(), n));
    ++st.step_index;

    if (drop_pos != TLarsState::kNoColumn) {
        const std::size_t dropped = st.active[drop_pos];
        cholesky_downdate(st.chol, a, drop_pos);
        st.active.erase(st.active.begin() + static_cast<std::ptrdiff_t>(drop_pos));
        st.signs.erase(st.signs.begin() + static_cast<std::ptrdiff_t>(drop_pos));
        st.coeffs.erase(st.coeffs.begin() + static_cast<std::ptrdiff_t>(drop_pos));
        if (dropped >= st.p) --st.n_dummies_active;
        if (!st.member_flags.empty()) st.member_flags[dropped] = 0;
        return;  // dropped columns may re-enter; next step re-scans
    }

    st.next_col = tying;
    const double remaining = big_c - gamma * norm_a;
    if (tying == TLarsState::kNoColumn || remaining <= kZeroCorrTol ||
        st.active.size() >= st.max_active(n)) {
        st.terminal = true;
        st.next_col = TLarsState::kNoColumn;
    }
}

void run_until_dummies(TLarsState& st, const ColumnSource& xt, std::size_t T) {
    if (T < 1) throw ArgumentError("dummy stop count T must be >= 1");
    if (T < st.n_dummies_active)
        throw ArgumentError("T = " + std::to_string(T) + " below current dummy count " +
                            std::to_string(st.n_dummies_active));
    while (!st.terminal && st.n_dummies_active < T) tlars_step(st, xt);
}

// --- checkpoint serialization --------------------------------------------------

namespace {
constexpr char kCheckpointMagic[9] = "BIGSELCK";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_state(const TLarsState& st,
                                          const CheckpointInfo& info) {
    ByteWriter w;
    w.bytes(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(kCheckpointMagic), 8));
    w.u32(kCheckpointVersion);
    w.u64(info.k);
    w.u64(info.config_hash);
    w.u64(info.block_digest);
    w.u64(st.p);
    w.u64(st.L);
    w.u64(st.step_index);
    w.u64(st.n_dummies_active);
    w.u64(st.next_col);
    w.f64(st.residual_norm);
    w.u8(st.terminal ? 1 : 0);
    w.u8(st.lasso_drop ? 1 : 0);
    w.size_vec(st.active);
    w.i8_vec(st.signs);
    w.f64_vec(st.coeffs);
    w.f64_vec(st.residual);
    w.f64_vec(st.chol);
    w.size_vec(st.excluded);
    const std::uint64_t checksum = fnv1a64(w.buffer());
    w.u64(checksum);
    return w.take();
}

TLarsState deserialize_state(std::span<const std::uint8_t> bytes,
                             const CheckpointInfo& expected) {
    if (bytes.size() < 8 + 4 + 8)
        throw FormatError("checkpoint record too short");
    if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
        throw FormatError("not a checkpoint record (bad magic)");
    {
        const std::uint64_t computed = fnv1a64(bytes.subspan(0, bytes.size() - 8));
        ByteReader tail(bytes.subspan(bytes.size() - 8));
        if (tail.u64() != computed)
            throw FormatError("checkpoint record is corrupt (checksum mismatch)");
    }

    ByteReader r(bytes.subspan(8, bytes.size() - 16));
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t k = r.u64();
    const std::uint64_t config_hash = r.u64();
    const std::uint64_t block_digest = r.u64();
    if (k != expected.k)
        throw ReproducibilityError("checkpoint is for experiment " + std::to_string(k) +
                                   ", expected " + std::to_string(expected.k));
    if (config_hash != expected.config_hash)
        throw ReproducibilityError(
            "checkpoint configuration hash mismatch; the run configuration "
            "differs from the one that wrote this checkpoint");
    if (block_digest != expected.block_digest)
        throw ReproducibilityError(
            "checkpoint dummy-block digest mismatch; the matrix content "
            "differs from the one the solver was paused against");

    TLarsState st;
    st.p = static_cast<std::size_t>(r.u64());
    st.L = static_cast<std::size_t>(r.u64());
    st.step_index = static_cast<std::size_t>(r.u64());
    st.n_dummies_active = static_cast<std::size_t>(r.u64());
    st.next_col = static_cast<std::size_t>(r.u64());
    st.residual_norm = r.f64();
    st.terminal = r.u8() != 0;
    st.lasso_drop = r.u8() != 0;
    st.active = r.size_vec();
    st.signs = r.i8_vec();
    st.coeffs = r.f64_vec();
    st.residual = r.f64_vec();
    st.chol = r.f64_vec();
    st.excluded = r.size_vec();

    const std::size_t a = st.active.size();
    std::size_t dummies = 0;
    for (std::size_t j : st.active)
        if (j >= st.p) ++dummies;
    if (st.signs.size() != a || st.coeffs.size() != a ||
        st.chol.size() != a * (a + 1) / 2 || dummies != st.n_dummies_active)
        throw FormatError("checkpoint fields are inconsistent");
    return st;
}

void snapshot(const TLarsState& st, const CheckpointInfo& info,
              const std::filesystem::path& path) {
    write_file_bytes(path, serialize_state(st, info));
}

TLarsState restore(const std::filesystem::path& path, const CheckpointInfo& expected) {
    return deserialize_state(read_file_bytes(path), expected);
}

}  // namespace bigsel
