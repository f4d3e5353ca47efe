#include "notehelp/mf_kernels.hpp"

#include <cmath>

#include <omp.h>

namespace notehelp::kernels {

RatingIndex RatingIndex::build(const SparseRatingMatrix& m) {
    RatingIndex idx;
    idx.rows = m.rows();
    idx.cols = m.cols();
    idx.rowOffsets.assign(idx.rows + 1, 0);
    idx.colOffsets.assign(idx.cols + 1, 0);
    for (const auto& e : m.entries) {
        ++idx.rowOffsets[e.row + 1];
        ++idx.colOffsets[e.col + 1];
    }
    for (std::size_t i = 0; i < idx.rows; ++i) idx.rowOffsets[i + 1] += idx.rowOffsets[i];
    for (std::size_t u = 0; u < idx.cols; ++u) idx.colOffsets[u + 1] += idx.colOffsets[u];
    idx.rowCols.resize(m.entries.size());
    idx.rowValues.resize(m.entries.size());
    idx.colRows.resize(m.entries.size());
    idx.colValues.resize(m.entries.size());
    auto rowFill = idx.rowOffsets;
    auto colFill = idx.colOffsets;
    // Entries are sorted by (row, col), so both fills keep ascending order.
    for (const auto& e : m.entries) {
        idx.rowCols[rowFill[e.row]] = e.col;
        idx.rowValues[rowFill[e.row]++] = e.value;
        idx.colRows[colFill[e.col]] = e.row;
        idx.colValues[colFill[e.col]++] = e.value;
    }
    return idx;
}

void solve_spd(std::span<double> a, std::span<double> b, std::size_t n) {
    // Cholesky; a tiny ridge is added only if the system is numerically singular.
    std::vector<double> work(a.begin(), a.end());
    for (double jitter = 0.0;; jitter = jitter == 0.0 ? 1e-12 : jitter * 100.0) {
        std::copy(work.begin(), work.end(), a.begin());
        for (std::size_t i = 0; i < n; ++i) a[i * n + i] += jitter;
        bool ok = true;
        for (std::size_t j = 0; j < n && ok; ++j) {
            double d = a[j * n + j];
            for (std::size_t l = 0; l < j; ++l) d -= a[j * n + l] * a[j * n + l];
            if (!(d > 1e-300)) {
                ok = false;
                break;
            }
            d = std::sqrt(d);
            a[j * n + j] = d;
            for (std::size_t i = j + 1; i < n; ++i) {
                double s = a[i * n + j];
                for (std::size_t l = 0; l < j; ++l) s -= a[i * n + l] * a[j * n + l];
                a[i * n + j] = s / d;
            }
        }
        if (!ok) {
            if (jitter > 1.0) break;
            continue;
        }
        for (std::size_t i = 0; i < n; ++i) {
            double s = b[i];
            for (std::size_t l = 0; l < i; ++l) s -= a[i * n + l] * b[l];
            b[i] = s / a[i * n + i];
        }
        for (std::size_t i = n; i-- > 0;) {
            double s = b[i];
            for (std::size_t l = i + 1; l < n; ++l) s -= a[l * n + i] * b[l];
            b[i] = s / a[i * n + i];
        }
        return;
    }
    std::fill(b.begin(), b.end(), 0.0);
}

namespace {

// Accumulates one observation into the normal equations of a block whose
// features are [1, other-side factor].
inline void accumulate(std::span<double> a, std::span<double> b, std::span<const double> f, double target,
                       std::size_t k) {
    const std::size_t n = k + 1;
    a[0] += 1.0;
    b[0] += target;
    for (std::size_t j = 0; j < k; ++j) {
        a[j + 1] += f[j];
        a[(j + 1) * n] += f[j];
        b[j + 1] += target * f[j];
        for (std::size_t l = 0; l < k; ++l) a[(j + 1) * n + l + 1] += f[j] * f[l];
    }
}

inline void add_ridge(std::span<double> a, std::size_t k, double lambdaIntercept, double lambdaFactor) {
    const std::size_t n = k + 1;
    a[0] += lambdaIntercept;
    for (std::size_t j = 1; j < n; ++j) a[j * n + j] += lambdaFactor;
}

inline double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += x[j] * y[j];
    return s;
}

}  // namespace

namespace parallel {

void solve_note_blocks(const RatingIndex& idx, MfParams& p, const MfConfig& c) {
    const std::size_t k = p.k, n = k + 1;
    const auto rows = static_cast<std::ptrdiff_t>(idx.rows);
#pragma omp parallel
    {
        std::vector<double> a(n * n), b(n);
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < rows; ++i) {
            std::fill(a.begin(), a.end(), 0.0);
            std::fill(b.begin(), b.end(), 0.0);
            for (std::size_t e = idx.rowOffsets[i]; e < idx.rowOffsets[i + 1]; ++e) {
                const auto u = idx.rowCols[e];
                accumulate(a, b, p.rater_factor(u), idx.rowValues[e] - p.mu - p.raterIntercept[u], k);
            }
            add_ridge(a, k, c.lambdaIntercept, c.lambdaFactor);
            solve_spd(a, b, n);
            p.noteIntercept[i] = b[0];
            for (std::size_t j = 0; j < k; ++j) p.noteFactor[i * k + j] = b[j + 1];
        }
    }
}

void solve_rater_blocks(const RatingIndex& idx, MfParams& p, const MfConfig& c) {
    const std::size_t k = p.k, n = k + 1;
    const auto cols = static_cast<std::ptrdiff_t>(idx.cols);
#pragma omp parallel
    {
        std::vector<double> a(n * n), b(n);
#pragma omp for schedule(static)
        for (std::ptrdiff_t u = 0; u < cols; ++u) {
            std::fill(a.begin(), a.end(), 0.0);
            std::fill(b.begin(), b.end(), 0.0);
            for (std::size_t e = idx.colOffsets[u]; e < idx.colOffsets[u + 1]; ++e) {
                const auto i = idx.colRows[e];
                accumulate(a, b, p.note_factor(i), idx.colValues[e] - p.mu - p.noteIntercept[i], k);
            }
            add_ridge(a, k, c.lambdaIntercept, c.lambdaFactor);
            solve_spd(a, b, n);
            p.raterIntercept[u] = b[0];
            for (std::size_t j = 0; j < k; ++j) p.raterFactor[u * k + j] = b[j + 1];
        }
    }
}

double squared_error(const RatingIndex& idx, const MfParams& p) {
    std::vector<double> partial(idx.rows, 0.0);
    const auto rows = static_cast<std::ptrdiff_t>(idx.rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t e = idx.rowOffsets[i]; e < idx.rowOffsets[i + 1]; ++e) {
            const auto u = idx.rowCols[e];
            const double r = idx.rowValues[e] -
                             (p.mu + p.noteIntercept[i] + p.raterIntercept[u] + dot(p.note_factor(i), p.rater_factor(u)));
            s += r * r;
        }
        partial[i] = s;
    }
    double total = 0.0;
    for (double s : partial) total += s;
    return total;
}

void gradient(const RatingIndex& idx, const MfParams& p, const MfConfig& c, MfGradient& g) {
    const std::size_t k = p.k;
    g.noteIntercept.assign(idx.rows, 0.0);
    g.raterIntercept.assign(idx.cols, 0.0);
    g.noteFactor.assign(idx.rows * k, 0.0);
    g.raterFactor.assign(idx.cols * k, 0.0);
    std::vector<double> rowResidualSum(idx.rows, 0.0);
    const auto rows = static_cast<std::ptrdiff_t>(idx.rows);
    const auto cols = static_cast<std::ptrdiff_t>(idx.cols);
#pragma omp parallel
    {
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < rows; ++i) {
            double rs = 0.0;
            for (std::size_t e = idx.rowOffsets[i]; e < idx.rowOffsets[i + 1]; ++e) {
                const auto u = idx.rowCols[e];
                const auto fu = p.rater_factor(u);
                const double r = idx.rowValues[e] - (p.mu + p.noteIntercept[i] + p.raterIntercept[u] +
                                                     dot(p.note_factor(i), fu));
                rs += r;
                for (std::size_t j = 0; j < k; ++j) g.noteFactor[i * k + j] += -2.0 * r * fu[j];
            }
            rowResidualSum[i] = rs;
            g.noteIntercept[i] = -2.0 * rs + 2.0 * c.lambdaIntercept * p.noteIntercept[i];
            for (std::size_t j = 0; j < k; ++j) g.noteFactor[i * k + j] += 2.0 * c.lambdaFactor * p.noteFactor[i * k + j];
        }
#pragma omp for schedule(static)
        for (std::ptrdiff_t u = 0; u < cols; ++u) {
            double rs = 0.0;
            for (std::size_t e = idx.colOffsets[u]; e < idx.colOffsets[u + 1]; ++e) {
                const auto i = idx.colRows[e];
                const auto fi = p.note_factor(i);
                const double r = idx.colValues[e] - (p.mu + p.noteIntercept[i] + p.raterIntercept[u] +
                                                     dot(fi, p.rater_factor(u)));
                rs += r;
                for (std::size_t j = 0; j < k; ++j) g.raterFactor[u * k + j] += -2.0 * r * fi[j];
            }
            g.raterIntercept[u] = -2.0 * rs + 2.0 * c.lambdaIntercept * p.raterIntercept[u];
            for (std::size_t j = 0; j < k; ++j) {
                g.raterFactor[u * k + j] += 2.0 * c.lambdaFactor * p.raterFactor[u * k + j];
            }
        }
    }
    double total = 0.0;
    for (double s : rowResidualSum) total += s;
    g.mu = -2.0 * total + 2.0 * c.lambdaIntercept * p.mu;
}

void pseudo_bounds(const RatingIndex& idx, const MfParams& p, const MfConfig& c, int nPseudo,
                   std::vector<NoteBounds>& out) {
    const std::size_t k = p.k, n = k + 1;
    out.assign(idx.rows, {});
    const auto rows = static_cast<std::ptrdiff_t>(idx.rows);
#pragma omp parallel
    {
        std::vector<double> a(n * n), b(n), a2(n * n), b2(n);
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < rows; ++i) {
            const double base = p.noteIntercept[i];
            if (nPseudo <= 0) {
                out[i] = {base, base};
                continue;
            }
            std::fill(a.begin(), a.end(), 0.0);
            std::fill(b.begin(), b.end(), 0.0);
            for (std::size_t e = idx.rowOffsets[i]; e < idx.rowOffsets[i + 1]; ++e) {
                const auto u = idx.rowCols[e];
                accumulate(a, b, p.rater_factor(u), idx.rowValues[e] - p.mu - p.raterIntercept[u], k);
            }
            add_ridge(a, k, c.lambdaIntercept, c.lambdaFactor);
            double lo = base, hi = base;
            for (double value : {1.0, 0.0}) {
                a2 = a;
                b2 = b;
                // Neutral synthetic rater: zero intercept, zero factor.
                a2[0] += nPseudo;
                b2[0] += nPseudo * (value - p.mu);
                solve_spd(a2, b2, n);
                lo = std::min(lo, b2[0]);
                hi = std::max(hi, b2[0]);
            }
            out[i] = {lo, hi};
        }
    }
}

}  // namespace parallel

namespace reference {

namespace {

struct Blocks {
    std::vector<double> a, b;
};

Blocks accumulate_side(const SparseRatingMatrix& m, const MfParams& p, bool byNote) {
    const std::size_t k = p.k, n = k + 1;
    const std::size_t count = byNote ? m.rows() : m.cols();
    Blocks blk{std::vector<double>(count * n * n, 0.0), std::vector<double>(count * n, 0.0)};
    for (const auto& e : m.entries) {
        const std::size_t owner = byNote ? e.row : e.col;
        const auto other = byNote ? p.rater_factor(e.col) : p.note_factor(e.row);
        const double otherIntercept = byNote ? p.raterIntercept[e.col] : p.noteIntercept[e.row];
        accumulate(std::span(blk.a).subspan(owner * n * n, n * n), std::span(blk.b).subspan(owner * n, n), other,
                   e.value - p.mu - otherIntercept, k);
    }
    return blk;
}

}  // namespace

void solve_note_blocks(const SparseRatingMatrix& m, MfParams& p, const MfConfig& c) {
    const std::size_t k = p.k, n = k + 1;
    auto blk = accumulate_side(m, p, true);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto a = std::span(blk.a).subspan(i * n * n, n * n);
        auto b = std::span(blk.b).subspan(i * n, n);
        add_ridge(a, k, c.lambdaIntercept, c.lambdaFactor);
        solve_spd(a, b, n);
        p.noteIntercept[i] = b[0];
        for (std::size_t j = 0; j < k; ++j) p.noteFactor[i * k + j] = b[j + 1];
    }
}

void solve_rater_blocks(const SparseRatingMatrix& m, MfParams& p, const MfConfig& c) {
    const std::size_t k = p.k, n = k + 1;
    auto blk = accumulate_side(m, p, false);
    for (std::size_t u = 0; u < m.cols(); ++u) {
        auto a = std::span(blk.a).subspan(u * n * n, n * n);
        auto b = std::span(blk.b).subspan(u * n, n);
        add_ridge(a, k, c.lambdaIntercept, c.lambdaFactor);
        solve_spd(a, b, n);
        p.raterIntercept[u] = b[0];
        for (std::size_t j = 0; j < k; ++j) p.raterFactor[u * k + j] = b[j + 1];
    }
}

double squared_error(const SparseRatingMatrix& m, const MfParams& p) {
    double total = 0.0;
    for (const auto& e : m.entries) {
        const double r = e.value - predict_rating(p, e.row, e.col);
        total += r * r;
    }
    return total;
}

void gradient(const SparseRatingMatrix& m, const MfParams& p, const MfConfig& c, MfGradient& g) {
    const std::size_t k = p.k;
    g.mu = 2.0 * c.lambdaIntercept * p.mu;
    g.noteIntercept.assign(m.rows(), 0.0);
    g.raterIntercept.assign(m.cols(), 0.0);
    g.noteFactor.assign(m.rows() * k, 0.0);
    g.raterFactor.assign(m.cols() * k, 0.0);
    for (const auto& e : m.entries) {
        const double r = e.value - predict_rating(p, e.row, e.col);
        g.mu += -2.0 * r;
        g.noteIntercept[e.row] += -2.0 * r;
        g.raterIntercept[e.col] += -2.0 * r;
        for (std::size_t j = 0; j < k; ++j) {
            g.noteFactor[e.row * k + j] += -2.0 * r * p.raterFactor[e.col * k + j];
            g.raterFactor[e.col * k + j] += -2.0 * r * p.noteFactor[e.row * k + j];
        }
    }
    for (std::size_t i = 0; i < m.rows(); ++i) {
        g.noteIntercept[i] += 2.0 * c.lambdaIntercept * p.noteIntercept[i];
        for (std::size_t j = 0; j < k; ++j) g.noteFactor[i * k + j] += 2.0 * c.lambdaFactor * p.noteFactor[i * k + j];
    }
    for (std::size_t u = 0; u < m.cols(); ++u) {
        g.raterIntercept[u] += 2.0 * c.lambdaIntercept * p.raterIntercept[u];
        for (std::size_t j = 0; j < k; ++j) g.raterFactor[u * k + j] += 2.0 * c.lambdaFactor * p.raterFactor[u * k + j];
    }
}

void pseudo_bounds(const SparseRatingMatrix& m, const MfParams& p, const MfConfig& c, int nPseudo,
                   std::vector<NoteBounds>& out) {
    const std::size_t k = p.k, n = k + 1;
    out.assign(m.rows(), {});
    auto blk = accumulate_side(m, p, true);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double base = p.noteIntercept[i];
        out[i] = {base, base};
        if (nPseudo <= 0) continue;
        std::vector<double> a(blk.a.begin() + i * n * n, blk.a.begin() + (i + 1) * n * n);
        add_ridge(a, k, c.lambdaIntercept, c.lambdaFactor);
        for (double value : {1.0, 0.0}) {
            auto a2 = a;
            std::vector<double> b2(blk.b.begin() + i * n, blk.b.begin() + (i + 1) * n);
            a2[0] += nPseudo;
            b2[0] += nPseudo * (value - p.mu);
            solve_spd(a2, b2, n);
            out[i].lower = std::min(out[i].lower, b2[0]);
            out[i].upper = std::max(out[i].upper, b2[0]);
        }
    }
}

}  // namespace reference

}  // namespace notehelp::kernels
