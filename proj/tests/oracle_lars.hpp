#ifndef BIGSEL_ORACLE_LARS_HPP
#define BIGSEL_ORACLE_LARS_HPP

// Independent dense LARS reference implementation for tests.
//
// Deliberately written with different mechanics than the production solver:
// dense row-major storage, correlations recomputed from scratch every step,
// the active Gram rebuilt and inverted by Gauss-Jordan elimination each step,
// and fresh argmax entry selection instead of carrying the tying column.
// Agreement is expected within tolerances, never bit-exactly.

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace oracle {

struct DenseLars {
    std::size_t n = 0, m = 0, p = 0;
    std::vector<double> x;  // row-major n x m
    std::vector<double> residual;
    std::vector<std::size_t> entry_order;  // active columns in entry order
    std::vector<int> sign;                 // per entry_order position
    std::vector<double> beta;              // length m, current coefficients
    bool finished = false;

    double at(std::size_t i, std::size_t j) const { return x[i * m + j]; }

    bool is_active(std::size_t j) const {
        for (std::size_t a : entry_order)
            if (a == j) return true;
        return false;
    }

    std::size_t dummies_active() const {
        std::size_t d = 0;
        for (std::size_t a : entry_order)
            if (a >= p) ++d;
        return d;
    }

    std::vector<double> correlations() const {
        std::vector<double> c(m, 0.0);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t i = 0; i < n; ++i) c[j] += at(i, j) * residual[i];
        return c;
    }

    // Gauss-Jordan inverse with partial pivoting.
    static std::vector<double> invert(std::vector<double> g, std::size_t a) {
        std::vector<double> inv(a * a, 0.0);
        for (std::size_t i = 0; i < a; ++i) inv[i * a + i] = 1.0;
        for (std::size_t col = 0; col < a; ++col) {
            std::size_t pivot = col;
            for (std::size_t r = col + 1; r < a; ++r)
                if (std::abs(g[r * a + col]) > std::abs(g[pivot * a + col])) pivot = r;
            if (std::abs(g[pivot * a + col]) < 1e-14)
                throw std::runtime_error("oracle: singular active Gram");
            if (pivot != col)
                for (std::size_t c = 0; c < a; ++c) {
                    std::swap(g[pivot * a + c], g[col * a + c]);
                    std::swap(inv[pivot * a + c], inv[col * a + c]);
                }
            const double d = g[col * a + col];
            for (std::size_t c = 0; c < a; ++c) {
                g[col * a + c] /= d;
                inv[col * a + c] /= d;
            }
            for (std::size_t r = 0; r < a; ++r) {
                if (r == col) continue;
                const double f = g[r * a + col];
                if (f == 0.0) continue;
                for (std::size_t c = 0; c < a; ++c) {
                    g[r * a + c] -= f * g[col * a + c];
                    inv[r * a + c] -= f * inv[col * a + c];
                }
            }
        }
        return inv;
    }

    // One LARS step; returns false when the path is complete.
    bool step() {
        if (finished) return false;
        const auto c = correlations();

        // Fresh argmax over inactive columns, lowest index on ties.
        double big_c = 0.0;
        std::size_t enter = m;
        for (std::size_t j = 0; j < m; ++j) {
            if (is_active(j)) continue;
            if (std::abs(c[j]) > big_c + 1e-12) {
                big_c = std::abs(c[j]);
                enter = j;
            }
        }
        if (enter == m || big_c < 1e-12) {
            finished = true;
            return false;
        }
        entry_order.push_back(enter);
        sign.push_back(c[enter] >= 0 ? 1 : -1);

        const std::size_t a = entry_order.size();
        // Shared correlation value over the (new) active set.
        double shared = 0.0;
        for (std::size_t idx : entry_order) shared = std::max(shared, std::abs(c[idx]));

        std::vector<double> gram(a * a, 0.0);
        for (std::size_t r = 0; r < a; ++r)
            for (std::size_t q = 0; q < a; ++q) {
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    dot += at(i, entry_order[r]) * at(i, entry_order[q]);
                gram[r * a + q] = sign[r] * sign[q] * dot;
            }
        const auto inv = invert(gram, a);

        std::vector<double> w(a, 0.0);
        double sum_w = 0.0;
        for (std::size_t r = 0; r < a; ++r) {
            for (std::size_t q = 0; q < a; ++q) w[r] += inv[r * a + q];
            sum_w += w[r];
        }
        const double norm_a = 1.0 / std::sqrt(sum_w);

        std::vector<double> u(n, 0.0);
        for (std::size_t r = 0; r < a; ++r)
            for (std::size_t i = 0; i < n; ++i)
                u[i] += norm_a * w[r] * sign[r] * at(i, entry_order[r]);

        double gamma = big_c / norm_a;  // full step by default
        const std::size_t max_active = std::min(n - 1, m);
        if (a < max_active) {
            for (std::size_t j = 0; j < m; ++j) {
                if (is_active(j)) continue;
                double aj = 0.0;
                for (std::size_t i = 0; i < n; ++i) aj += at(i, j) * u[i];
                const double d1 = norm_a - aj;
                if (d1 > 1e-12) {
                    const double t = (big_c - c[j]) / d1;
                    if (t > 1e-12 && t < gamma) gamma = t;
                }
                const double d2 = norm_a + aj;
                if (d2 > 1e-12) {
                    const double t = (big_c + c[j]) / d2;
                    if (t > 1e-12 && t < gamma) gamma = t;
                }
            }
        }

        for (std::size_t r = 0; r < a; ++r)
            beta[entry_order[r]] += gamma * norm_a * w[r] * sign[r];
        for (std::size_t i = 0; i < n; ++i) residual[i] -= gamma * u[i];

        if (gamma >= big_c / norm_a - 1e-12 || a >= max_active) finished = true;
        return true;
    }

    void run_until_dummies(std::size_t T) {
        while (!finished && dummies_active() < T) {
            if (!step()) break;
        }
    }
};

// Builds the oracle over any column-accessible matrix.
template <class ColumnMatrix>
DenseLars make_oracle(const ColumnMatrix& xt, const std::vector<double>& y,
                      std::size_t p) {
    DenseLars o;
    o.n = xt.rows();
    o.m = xt.cols();
    o.p = p;
    o.x.resize(o.n * o.m);
    for (std::size_t j = 0; j < o.m; ++j) {
        const double* col = xt.column(j);
        for (std::size_t i = 0; i < o.n; ++i) o.x[i * o.m + j] = col[i];
    }
    o.residual = y;
    o.beta.assign(o.m, 0.0);
    return o;
}

}  // namespace oracle

#endif
