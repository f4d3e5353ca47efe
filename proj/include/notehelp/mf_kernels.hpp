#pragma once

// Data-parallel kernels behind fit_mf and confidence_bounds.
//
// `parallel::` runs over compressed row/column indexes with OpenMP; each
// note (or rater) is solved by one thread and partial sums are combined in
// index order, so results do not depend on the thread count. `reference::`
// computes the same quantities with plain serial scans of the entry list and
// exists for tests and benchmarks.

#include <span>
#include <vector>

#include "notehelp/mf.hpp"

namespace notehelp::kernels {

struct RatingIndex {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> rowOffsets;  // CSR by note
    std::vector<std::uint32_t> rowCols;
    std::vector<double> rowValues;
    std::vector<std::size_t> colOffsets;  // CSC by rater
    std::vector<std::uint32_t> colRows;
    std::vector<double> colValues;

    static RatingIndex build(const SparseRatingMatrix& m);
};

struct MfGradient {
    double mu = 0.0;
    std::vector<double> noteIntercept, raterIntercept, noteFactor, raterFactor;
};

// Solves the (k+1)x(k+1) symmetric positive definite system in place;
// `a` is row-major and overwritten, the solution is left in `b`.
void solve_spd(std::span<double> a, std::span<double> b, std::size_t n);

namespace parallel {
void solve_note_blocks(const RatingIndex& idx, MfParams& p, const MfConfig& c);
void solve_rater_blocks(const RatingIndex& idx, MfParams& p, const MfConfig& c);
double squared_error(const RatingIndex& idx, const MfParams& p);
void gradient(const RatingIndex& idx, const MfParams& p, const MfConfig& c, MfGradient& g);
void pseudo_bounds(const RatingIndex& idx, const MfParams& p, const MfConfig& c, int nPseudo,
                   std::vector<NoteBounds>& out);
}  // namespace parallel

namespace reference {
void solve_note_blocks(const SparseRatingMatrix& m, MfParams& p, const MfConfig& c);
void solve_rater_blocks(const SparseRatingMatrix& m, MfParams& p, const MfConfig& c);
double squared_error(const SparseRatingMatrix& m, const MfParams& p);
void gradient(const SparseRatingMatrix& m, const MfParams& p, const MfConfig& c, MfGradient& g);
void pseudo_bounds(const SparseRatingMatrix& m, const MfParams& p, const MfConfig& c, int nPseudo,
                   std::vector<NoteBounds>& out);
}  // namespace reference

}  // namespace notehelp::kernels
