#pragma once

// Deterministic fixture generators. The committed files under tests/data are
// their output; tests/support/make_fixtures regenerates them.

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "notehelp/eval.hpp"
#include "notehelp/ingest.hpp"

namespace notehelp::testing {

namespace fs = std::filesystem;

// Root of the committed fixtures, set by the build.
fs::path data_dir();

// A fresh empty directory under the build tree's scratch area.
fs::path scratch_dir(const std::string& name);

std::string read_file(const fs::path& path);

// ---- ranking: 40 notes, 60 raters -----------------------------------------

struct RankingFixture {
    std::vector<RawNote> notes;
    std::vector<RawRating> ratings;
    std::vector<NoteStatusRecord> statuses;
    std::vector<PostText> posts;
    std::string now;

    std::string consensusHelpful;  // rated helpful by both rater camps
    std::string fourRatings;       // only four ratings
    std::string tagRevert;         // helpful, but raters agree on a single tag
    std::string stabilized;        // helpful status published 20 days ago, polarized since
    std::string recentHistory;     // same as above, published 5 days ago
    std::vector<std::string> contrarians;
};

RankingFixture ranking_fixture();

// notes.tsv, ratings_a.tsv, ratings_b.tsv, status.tsv, posts.tsv. The two
// rating shards overlap in one identical row.
void write_ranking_fixture(const RankingFixture& f, const fs::path& dir);

// ---- cleaning: 150 labeled notes ------------------------------------------

struct CleaningFixture {
    std::vector<RawNote> notes;
    std::vector<RawRating> ratings;
    std::vector<NoteStatusRecord> statuses;

    // What the cleaning rules must produce, fixed when each row is generated.
    std::map<std::string, std::pair<Helpfulness, ReasonSet>, std::less<>> survivors;
    std::map<std::string, std::size_t> rejectsByCause;
    std::size_t opinionMerged = 0;    // survivors whose OrBias label came from the raw alias
    std::size_t otherStripped = 0;    // survivors that also carried notHelpfulOther
    std::size_t orphanRatings = 0;
    std::size_t duplicateRatings = 0;
};

CleaningFixture cleaning_fixture();
void write_cleaning_fixture(const CleaningFixture& f, const fs::path& dir);

// ---- definition search ----------------------------------------------------

// Three cue words per reason; a note mentions one cue for each gold reason.
const std::array<std::array<std::string_view, 3>, kReasonCount>& cue_words();

std::vector<DatasetExample> apo_examples(std::size_t n, std::uint64_t seed, Split split);

// ---- transfer -------------------------------------------------------------

std::vector<SufficiencyExample> sufficiency_fixture();
std::vector<FcExample> factcheck_fixture();

void write_sufficiency_jsonl(const fs::path& path, std::span<const SufficiencyExample> examples);
void write_factcheck_jsonl(const fs::path& path, std::span<const FcExample> examples);

}  // namespace notehelp::testing
