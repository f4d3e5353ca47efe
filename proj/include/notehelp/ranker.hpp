#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "notehelp/ingest.hpp"
#include "notehelp/mf.hpp"
#include "notehelp/reason_tag.hpp"
#include "notehelp/status.hpp"

namespace notehelp {

struct Thresholds {
    double helpfulMin = 0.40;
    double notHelpfulBase = -0.05;
    double notHelpfulFactorWeight = 0.8;
    double ucbMax = -0.04;
    std::size_t minRatings = 5;
    int stabilizationDays = 14;

    void validate() const;
};

/// Status rules, evaluated in this order with strict comparisons:
/// fewer than minRatings -> NEED_MORE_RATINGS; score > helpfulMin -> HELPFUL;
/// score < notHelpfulBase - weight*|factor| or ucb < ucbMax -> NOT_HELPFUL;
/// otherwise NEED_MORE_RATINGS.
Status classify_status(double score, double factorScore, double ucb, std::size_t ratingCount,
                       const Thresholds& t = {});

struct RankerConfig {
    Thresholds thresholds;
    MfConfig mf;
    std::size_t minRaterRatings = 10;
    std::size_t minNoteRatings = 5;
    double raterRetention = 0.66;
    int nPseudo = 1;
    std::size_t minTagCount = 2;
    ReasonSet diligenceTags = default_diligence_tags();

    static ReasonSet default_diligence_tags();
};

nlohmann::json to_json(const RankerConfig& c);
RankerConfig ranker_config_from_json(const nlohmann::json& j);

struct FilteredRater {
    std::string raterId;
    double helpfulness = 0.0;
    std::string reason;
};

struct PrescoringOutput {
    std::vector<RawRating> matrixRatings;    // ratings surviving the count filter
    MfParams initialParams;
    std::map<std::string, Status, std::less<>> intermediateStatus;
    RaterHelpfulness initialHelpfulness;
    std::vector<FilteredRater> filteredRaters;
    std::vector<RawRating> filteredRatings;  // helpfulness-filtered ratings used for refinement
    MfParams refinedParams;
    std::map<std::string, Status, std::less<>> refinedStatus;
    RaterHelpfulness refinedHelpfulness;
    std::map<ReasonTag, MfParams> tagConsensus;

    bool rater_filtered(std::string_view raterId) const;
};

PrescoringOutput prescore(std::span<const RawNote> notes, std::span<const RawRating> ratings,
                          const RankerConfig& config, std::uint64_t seed);

struct NoteScore {
    std::string noteId;
    bool scored = false;  // false when the note did not survive the count filter
    double helpfulnessScore = 0.0;
    double factorScore = 0.0;
    NoteBounds bounds;
    std::size_t ratingCount = 0;
    Status status = Status::NeedMoreRatings;
    std::vector<ReasonTag> topTags;
    ReasonSet qualifiedTags;
    std::optional<double> diligenceScore;
    bool stabilized = false;
    bool tagReverted = false;
};

nlohmann::json to_json(const NoteScore& s);

struct TagAssignment {
    std::vector<ReasonTag> topTags;
    Status status = Status::NeedMoreRatings;
    ReasonSet qualified;
    bool reverted = false;
};

/// Candidate tags match the status polarity and were applied by at least
/// `minCount` ratings; they are ranked by count, then tag-consensus intercept
/// (`consensus`, indexed by tag, may be empty), then wire name. A non-NMR
/// status without two candidates reverts to NEED_MORE_RATINGS.
TagAssignment assign_tags(std::span<const RawRating> noteRatings, Status status,
                          std::span<const double> consensus = {}, std::size_t minCount = 2);

Status stabilize_status(const NoteStatusRecord* history, Status fresh, std::int64_t nowMillis,
                        const Thresholds& t = {});

std::vector<NoteScore> score(const PrescoringOutput& pre, std::span<const RawNote> notes,
                             std::span<const RawRating> ratings, std::span<const NoteStatusRecord> history,
                             const RankerConfig& config, std::uint64_t seed, std::int64_t nowMillis);

// NEED_MORE_RATINGS notes are left out.
AggregatedLabels aggregate_reason_labels(std::span<const NoteScore> scores);

void write_scores_jsonl(const std::filesystem::path& path, std::span<const NoteScore> scores);

// Parses "YYYY-MM-DD", "YYYY-MM-DDTHH:MM[:SS[.fff]][Z|+HH:MM]" into epoch milliseconds.
std::int64_t parse_iso8601_millis(std::string_view text);

}  // namespace notehelp
