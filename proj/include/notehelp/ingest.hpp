#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "notehelp/reason_tag.hpp"
#include "notehelp/status.hpp"

namespace notehelp {

enum class NoteClassification : std::uint8_t { Misleading, NotMisleading };

struct RawNote {
    std::string noteId;
    std::string postId;
    std::int64_t createdAtMillis = 0;
    NoteClassification classification = NoteClassification::Misleading;
    std::string summary;
    std::string language = "UNKNOWN";

    bool operator==(const RawNote&) const = default;
};

enum class HelpfulnessLevel : std::uint8_t { Helpful, SomewhatHelpful, NotHelpful };

std::string_view to_string(HelpfulnessLevel level);
std::optional<HelpfulnessLevel> level_from_string(std::string_view s);

struct RawRating {
    std::string noteId;
    std::string raterId;
    std::int64_t createdAtMillis = 0;
    HelpfulnessLevel level = HelpfulnessLevel::Helpful;
    std::vector<std::string> tagFlags;  // raw column names, sorted

    bool operator==(const RawRating&) const = default;
};

struct NoteStatusRecord {
    std::string noteId;
    Status currentStatus = Status::NeedMoreRatings;
    std::int64_t firstStatusAtMillis = 0;
    std::int64_t lastUpdatedMillis = 0;
    // Explanation tags published with the status (firstTag/secondTag columns), if present.
    std::vector<std::string> tags;
};

// Machine-readable record of anything excluded from the pipeline.
struct Reject {
    std::string source;  // file or stage name
    std::size_t line = 0;
    std::string id;
    std::string cause;  // e.g. BAD_ROW, EMPTY_NOTE, NEED_MORE_RATINGS
    std::string detail;
};

nlohmann::json to_json(const Reject& r);

template <typename T>
struct Parsed {
    std::vector<T> rows;
    std::vector<Reject> rejects;
};

Parsed<RawNote> parse_notes_table(const std::filesystem::path& path);
Parsed<RawRating> parse_ratings_table(const std::filesystem::path& path);
Parsed<NoteStatusRecord> parse_status_table(const std::filesystem::path& path);

struct PostText {
    std::string postId;
    std::string text;
};
// Optional two-column table (tweetId, text) of crawled post content.
Parsed<PostText> parse_posts_table(const std::filesystem::path& path);

/// Reads all shards (concurrently), removes exact duplicates on
/// (noteId, raterId, createdAtMillis), and keeps the latest rating per
/// (noteId, raterId). Output is sorted by noteId then raterId, so the result
/// does not depend on shard order.
Parsed<RawRating> merge_rating_shards(std::span<const std::filesystem::path> paths);

// Same de-duplication applied to in-memory ratings.
std::vector<RawRating> dedupe_ratings(std::vector<RawRating> ratings, std::vector<Reject>* rejects = nullptr);

struct JoinedRecord {
    RawNote note;
    std::vector<RawRating> ratings;
    NoteStatusRecord status;
};

struct JoinReport {
    std::vector<std::string> notesWithoutStatus;
    std::vector<std::string> orphanRatingNoteIds;  // distinct unknown noteIds referenced by ratings
    std::size_t orphanRatings = 0;
    std::size_t statusesWithoutNote = 0;
};

struct JoinResult {
    std::vector<JoinedRecord> records;  // sorted by noteId
    JoinReport report;
};

JoinResult join_tables(std::span<const RawNote> notes, std::span<const RawRating> ratings,
                       std::span<const NoteStatusRecord> statuses);

enum class Helpfulness : std::uint8_t { Helpful, NotHelpful };

enum class Split : std::uint8_t { Unassigned, Train, Dev, Test };

std::string_view to_string(Helpfulness h);
std::string_view to_string(Split s);

struct DatasetExample {
    std::string postId;
    std::string noteId;
    std::string postText;
    std::string noteText;
    std::string language;
    Helpfulness label = Helpfulness::Helpful;
    ReasonSet reasons;
    Split split = Split::Unassigned;

    bool postMissing() const { return postText.empty(); }
    bool operator==(const DatasetExample&) const = default;
};

// Input to cleaning: one note with its final status and raw reason tag names.
struct LabeledRecord {
    RawNote note;
    std::string postText;
    Status status = Status::NeedMoreRatings;
    std::vector<std::string> rawReasons;
};

enum class LabelSource : std::uint8_t { StatusTable, Ranker };
std::string_view to_string(LabelSource s);

using PostTextIndex = std::map<std::string, std::string, std::less<>>;

std::vector<LabeledRecord> label_from_status_table(std::span<const JoinedRecord> joined,
                                                   const PostTextIndex& posts);

struct AggregatedLabel {
    Helpfulness label = Helpfulness::Helpful;
    ReasonSet reasons;
};
using AggregatedLabels = std::map<std::string, AggregatedLabel, std::less<>>;

// Notes absent from `aggregated` were NEED_MORE_RATINGS in the ranker output.
std::vector<LabeledRecord> label_from_ranker(std::span<const JoinedRecord> joined,
                                             const AggregatedLabels& aggregated,
                                             const PostTextIndex& posts);

struct CleanResult {
    std::vector<DatasetExample> examples;
    std::vector<Reject> rejects;
};

/// Drops empty notes and NEED_MORE_RATINGS notes, merges
/// notHelpfulOpinionSpeculation into notHelpfulOpinionSpeculationOrBias,
/// drops the "Other" tags (excluding records left with nothing else), and
/// binarizes the label. Reasons of the opposite polarity are discarded.
CleanResult clean_dataset(std::span<const LabeledRecord> records);

// Inverse view of an example as a labeled record; clean_dataset on the
// result reproduces the example.
LabeledRecord to_labeled_record(const DatasetExample& e);

struct SplitRatios {
    unsigned train = 7;
    unsigned dev = 1;
    unsigned test = 2;
};

enum class LanguageBucket : std::uint8_t { English, Other };
LanguageBucket language_bucket(std::string_view language);

struct SplitResult {
    std::vector<DatasetExample> examples;  // same order as input
    std::vector<std::string> warnings;
};

/// Stratifies on (language bucket, label). Within a stratum of size n the
/// split sizes are floor(n*r/sum) plus remainders handed out by descending
/// fractional part (ties: train, dev, test). Strata smaller than 3 go to
/// train with a warning.
SplitResult stratified_split(std::vector<DatasetExample> examples, SplitRatios ratios,
                             std::uint64_t seed);

// Per-split counts for (bucket, label, split), used by reports and tests.
std::array<std::size_t, 3> split_counts(std::span<const DatasetExample> examples);

using Tokenizer = std::function<std::size_t(std::string_view)>;
std::size_t whitespace_token_count(std::string_view text);

struct LengthSummary {
    double mean = 0.0;
    double median = 0.0;
    std::size_t min = 0;
    std::size_t max = 0;
};

struct DatasetStats {
    std::size_t totalExamples = 0;
    std::size_t totalPosts = 0;
    std::map<std::size_t, std::size_t> notesPerPost;  // notes-per-post -> number of posts
    std::size_t postsAllHelpful = 0;
    std::size_t postsAllUnhelpful = 0;
    std::size_t postsMixed = 0;
    LengthSummary postTokens;  // one entry per distinct post
    LengthSummary noteTokens;  // one entry per example
    std::map<std::string, std::size_t> languages;
    std::map<std::string, std::size_t> reasons;  // wire name -> examples carrying it

    double percent(std::size_t count, std::size_t total) const;
};

DatasetStats dataset_stats(std::span<const DatasetExample> examples,
                           const Tokenizer& tokenizer = whitespace_token_count);

nlohmann::json to_json(const DatasetStats& s);

nlohmann::json to_json(const DatasetExample& e);
DatasetExample example_from_json(const nlohmann::json& j);

void write_examples_jsonl(const std::filesystem::path& path, std::span<const DatasetExample> examples);
std::vector<DatasetExample> read_examples_jsonl(const std::filesystem::path& path);
void write_rejects_jsonl(const std::filesystem::path& path, std::span<const Reject> rejects);

}  // namespace notehelp
