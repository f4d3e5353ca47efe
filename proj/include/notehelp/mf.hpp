#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "notehelp/ingest.hpp"
#include "notehelp/reason_tag.hpp"
#include "notehelp/status.hpp"

namespace notehelp {

struct RatingValueMap {
    double helpful = 1.0;
    double somewhatHelpful = 0.5;
    double notHelpful = 0.0;

    double operator()(HelpfulnessLevel level) const;
};

struct MatrixEntry {
    std::uint32_t row = 0;  // note
    std::uint32_t col = 0;  // rater
    double value = 0.0;
};

/// Note x rater matrix. Rows and columns are ordered by id and entries by
/// (row, col), so two matrices built from the same ratings are identical.
struct SparseRatingMatrix {
    std::vector<std::string> noteIds;
    std::vector<std::string> raterIds;
    std::map<std::string, std::uint32_t, std::less<>> noteIndex;
    std::map<std::string, std::uint32_t, std::less<>> raterIndex;
    std::vector<MatrixEntry> entries;

    std::size_t rows() const { return noteIds.size(); }
    std::size_t cols() const { return raterIds.size(); }
    std::optional<std::uint32_t> note_row(std::string_view id) const;
    std::optional<std::uint32_t> rater_col(std::string_view id) const;
};

// Validates (no duplicate cells, indices in range) and sorts the entries.
SparseRatingMatrix make_matrix(std::vector<std::string> noteIds, std::vector<std::string> raterIds,
                               std::vector<MatrixEntry> entries);

/// Keeps raters with at least `minRaterRatings` and notes with at least
/// `minNoteRatings` ratings, re-applying both rules until nothing changes.
/// Throws if nothing survives.
SparseRatingMatrix build_matrix(std::span<const RawRating> ratings, std::size_t minRaterRatings = 10,
                                std::size_t minNoteRatings = 5, const RatingValueMap& values = {});

enum class MfOptimizer : std::uint8_t { AlternatingLeastSquares, GradientDescent };

struct MfConfig {
    std::size_t k = 1;
    double lambdaIntercept = 0.15;
    double lambdaFactor = 0.03;
    double learningRate = 0.01;  // gradient descent only
    std::size_t maxEpochs = 500;
    double convergenceTol = 1e-7;
    std::uint64_t seed = 0;
    MfOptimizer optimizer = MfOptimizer::AlternatingLeastSquares;
    bool referenceKernels = false;  // run the serial reference kernels instead of the OpenMP ones

    void validate() const;
};

nlohmann::json to_json(const MfConfig& c);
MfConfig mf_config_from_json(const nlohmann::json& j, MfConfig base = {});

struct MfParams {
    double mu = 0.0;
    std::vector<double> noteIntercept;   // "Note Helpfulness Score"
    std::vector<double> raterIntercept;
    std::size_t k = 1;
    std::vector<double> noteFactor;      // row-major, rows() x k
    std::vector<double> raterFactor;     // row-major, cols() x k
    std::vector<std::string> noteIds;
    std::vector<std::string> raterIds;
    std::vector<double> epochLosses;     // objective before training, then after each epoch
    MfConfig config;

    std::span<const double> note_factor(std::size_t i) const { return {noteFactor.data() + i * k, k}; }
    std::span<const double> rater_factor(std::size_t u) const { return {raterFactor.data() + u * k, k}; }
    std::span<double> note_factor(std::size_t i) { return {noteFactor.data() + i * k, k}; }
    std::span<double> rater_factor(std::size_t u) { return {raterFactor.data() + u * k, k}; }

    // First factor component, the scalar used by the not-helpful threshold.
    double note_factor_score(std::size_t i) const { return noteFactor[i * k]; }
};

// Intercepts at zero, factors uniform in [-0.01, 0.01] from config.seed.
MfParams init_params(const SparseRatingMatrix& m, const MfConfig& config);

double mf_objective(const SparseRatingMatrix& m, const MfParams& p, const MfConfig& config);

/// Fits mu + note/rater intercepts + factor dot products by regularized least
/// squares. The default optimizer is alternating exact block solves, which
/// makes the objective non-increasing every epoch; gradient descent with a
/// fixed learning rate is available for comparison.
MfParams fit_mf(const SparseRatingMatrix& m, const MfConfig& config, const MfParams* warmStart = nullptr);

double predict_rating(const MfParams& p, std::size_t noteIdx, std::size_t raterIdx);

struct NoteBounds {
    double lower = 0.0;
    double upper = 0.0;
};

struct ConfidenceBounds {
    std::vector<NoteBounds> notes;  // indexed like matrix rows
};

/// For every note, appends `nPseudo` helpful (then not-helpful) ratings from a
/// neutral synthetic rater and re-solves only that note's intercept and
/// factor with everything else frozen.
ConfidenceBounds confidence_bounds(const SparseRatingMatrix& m, const MfParams& p, const MfConfig& config,
                                   int nPseudo = 1);

struct RaterHelpfulness {
    std::map<std::string, double, std::less<>> scores;  // absent: no status-bearing ratings
    std::set<std::string, std::less<>> lowHelpfulness;
    double retention = 0.66;

    bool retained(std::string_view raterId) const { return !lowHelpfulness.contains(raterId); }
};

/// Share of each rater's ratings on CRH/CRNH notes that match the note's
/// status. SOMEWHAT_HELPFUL ratings count toward neither side. Raters below
/// `retention` (inclusive threshold) are flagged.
RaterHelpfulness rater_helpfulness(std::span<const RawRating> ratings,
                                   const std::map<std::string, Status, std::less<>>& statuses,
                                   double retention = 0.66);

// Fits the same model on the indicator "this rating carries one of `tags`".
MfParams tag_consensus_fit(std::span<const RawRating> ratings, const ReasonSet& tags, const MfConfig& config);
MfParams tag_consensus_fit(std::span<const RawRating> ratings, ReasonTag tag, const MfConfig& config);

// Canonical reason tags carried by a rating (raw flags mapped, Other/ignored dropped).
ReasonSet canonical_tags(const RawRating& r);

nlohmann::json to_json(const MfParams& p);
MfParams mf_params_from_json(const nlohmann::json& j);

}  // namespace notehelp
