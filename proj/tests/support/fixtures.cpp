#include "fixtures.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "notehelp/error.hpp"
#include "notehelp/rng.hpp"

namespace notehelp::testing {

using nlohmann::json;

fs::path data_dir() { return NOTEHELP_TEST_DATA_DIR; }

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::path(NOTEHELP_TEST_SCRATCH_DIR) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

constexpr std::int64_t kDay = 24LL * 60 * 60 * 1000;
// 2024-06-01T00:00:00Z
constexpr std::int64_t kNow = 1717200000000LL;

std::string id(const char* prefix, std::size_t n, int width) {
    std::string digits = std::to_string(n);
    return prefix + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(width, digits.size()), '0') + digits;
}

// Tag columns written to every ratings table, in this order.
const std::vector<std::string>& rating_tag_columns() {
    static const std::vector<std::string> cols = [] {
        std::vector<std::string> c;
        for (auto t : all_reason_tags()) c.emplace_back(wire_name(t));
        c.insert(c.end(), {"helpfulOther", "notHelpfulOther", "notHelpfulOpinionSpeculation", "notHelpfulOutdated"});
        return c;
    }();
    return cols;
}

std::string rating_header() {
    std::string h = "noteId\traterParticipantId\tcreatedAtMillis\thelpfulnessLevel";
    for (const auto& c : rating_tag_columns()) h += "\t" + c;
    return h;
}

std::string rating_row(const RawRating& r) {
    std::string row = r.noteId + "\t" + r.raterId + "\t" + std::to_string(r.createdAtMillis) + "\t" +
                      std::string(to_string(r.level));
    for (const auto& c : rating_tag_columns()) {
        const bool on = std::find(r.tagFlags.begin(), r.tagFlags.end(), c) != r.tagFlags.end();
        row += on ? "\t1" : "\t0";
    }
    return row;
}

void write_lines(const fs::path& path, const std::string& header, const std::vector<std::string>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << header << '\n';
    for (const auto& r : rows) out << r << '\n';
}

std::string note_row(const RawNote& n) {
    return n.noteId + "\t" + n.postId + "\t" + std::to_string(n.createdAtMillis) + "\t" +
           (n.classification == NoteClassification::Misleading ? "MISINFORMED_OR_POTENTIALLY_MISLEADING"
                                                               : "NOT_MISLEADING") +
           "\t" + n.summary + "\t" + n.language;
}

void write_notes(const fs::path& path, const std::vector<RawNote>& notes) {
    std::vector<std::string> rows;
    for (const auto& n : notes) rows.push_back(note_row(n));
    write_lines(path, "noteId\ttweetId\tcreatedAtMillis\tclassification\tsummary\tlanguage", rows);
}

void write_statuses(const fs::path& path, const std::vector<NoteStatusRecord>& statuses) {
    std::vector<std::string> rows;
    for (const auto& s : statuses) {
        rows.push_back(s.noteId + "\t" + std::string(to_string(s.currentStatus)) + "\t" +
                       std::to_string(s.firstStatusAtMillis) + "\t" + std::to_string(s.lastUpdatedMillis) + "\t" +
                       (s.tags.size() > 0 ? s.tags[0] : "") + "\t" + (s.tags.size() > 1 ? s.tags[1] : ""));
    }
    write_lines(path, "noteId\tcurrentStatus\ttimestampMillisOfFirstNonNMRStatus\ttimestampMillisOfCurrentStatus\tfirstTag\tsecondTag",
                rows);
}

RawRating rating(std::string note, std::string rater, std::int64_t at, HelpfulnessLevel level,
                 std::vector<std::string> tags) {
    std::sort(tags.begin(), tags.end());
    return RawRating{std::move(note), std::move(rater), at, level, std::move(tags)};
}

}  // namespace

// ---- ranking --------------------------------------------------------------

RankingFixture ranking_fixture() {
    RankingFixture f;
    f.now = "2024-06-01T00:00:00Z";

    // Camp A: r01..r28, camp B: r29..r56, contrarians: r57..r60.
    auto camp = [](int c, std::size_t i) { return id("r", 1 + c * 28 + i % 28, 2); };
    for (std::size_t i = 57; i <= 60; ++i) f.contrarians.push_back(id("r", i, 2));

    enum class Kind { Helpful, HelpfulOneTag, NotHelpful, Polarized, FewRatings };
    std::vector<Kind> kinds(40);
    for (std::size_t i = 0; i < 40; ++i) {
        const std::size_t n = i + 1;
        if (n <= 6) kinds[i] = Kind::Helpful;
        else if (n <= 28) kinds[i] = Kind::NotHelpful;
        else if (n <= 32) kinds[i] = Kind::Polarized;
        else if (n == 33) kinds[i] = Kind::HelpfulOneTag;
        else if (n == 34) kinds[i] = Kind::FewRatings;
        else kinds[i] = Kind::Polarized;
    }
    f.consensusHelpful = "n01";
    f.stabilized = "n31";
    f.recentHistory = "n32";
    f.tagRevert = "n33";
    f.fourRatings = "n34";

    const char* langs[] = {"en", "en", "en", "es", "en", "ja", "en", "pt"};
    for (std::size_t i = 0; i < 40; ++i) {
        const std::size_t n = i + 1;
        RawNote note;
        note.noteId = id("n", n, 2);
        note.postId = id("p", (i / 2) + 1, 2);
        note.createdAtMillis = kNow - 30 * kDay + static_cast<std::int64_t>(n) * 3600000;
        note.classification = n % 5 == 0 ? NoteClassification::NotMisleading : NoteClassification::Misleading;
        note.summary = "Note " + note.noteId + " adds context with a source link https://example.org/" + note.noteId;
        note.language = langs[i % 8];
        f.notes.push_back(note);
    }
    for (std::size_t p = 1; p <= 20; ++p) {
        f.posts.push_back({id("p", p, 2), "Post " + id("p", p, 2) + " makes a claim about public figures and numbers"});
    }

    std::int64_t clock = kNow - 20 * kDay;
    auto add = [&](const std::string& note, const std::string& rater, HelpfulnessLevel level,
                   std::vector<std::string> tags) {
        clock += 60000;
        f.ratings.push_back(rating(note, rater, clock, level, std::move(tags)));
    };
    for (std::size_t i = 0; i < 40; ++i) {
        const auto& note = f.notes[i].noteId;
        const std::size_t off = i * 5;
        switch (kinds[i]) {
            case Kind::Helpful:
            case Kind::HelpfulOneTag:
                for (std::size_t k = 0; k < 24; ++k) {
                    const auto rater = camp(static_cast<int>(k % 2), off + k / 2);
                    std::vector<std::string> tags{"helpfulClear"};
                    if (kinds[i] == Kind::Helpful) {
                        if (k % 3 != 0) tags.push_back("helpfulInformative");
                        if (k % 3 == 0) tags.push_back("helpfulGoodSources");
                    }
                    add(note, rater, HelpfulnessLevel::Helpful, tags);
                }
                for (const auto& c : f.contrarians) add(note, c, HelpfulnessLevel::NotHelpful, {"notHelpfulIncorrect"});
                break;
            case Kind::NotHelpful:
                for (std::size_t k = 0; k < 24; ++k) {
                    const auto rater = camp(static_cast<int>(k % 2), off + k / 2);
                    std::vector<std::string> tags{"notHelpfulIncorrect"};
                    if (k % 2 == 0) tags.push_back("notHelpfulSourcesMissingOrUnreliable");
                    if (k % 4 == 1) tags.push_back("notHelpfulMissingKeyPoints");
                    add(note, rater, HelpfulnessLevel::NotHelpful, tags);
                }
                if (i % 3 == 0) {
                    for (const auto& c : f.contrarians) add(note, c, HelpfulnessLevel::Helpful, {"helpfulClear"});
                }
                break;
            case Kind::Polarized:
                for (std::size_t k = 0; k < 10; ++k) {
                    add(note, camp(0, off + k), HelpfulnessLevel::Helpful, {"helpfulInformative", "helpfulImportantContext"});
                    add(note, camp(1, off + k), HelpfulnessLevel::NotHelpful,
                        {"notHelpfulArgumentativeOrBiased", "notHelpfulOpinionSpeculation"});
                }
                break;
            case Kind::FewRatings:
                for (std::size_t k = 0; k < 4; ++k) add(note, camp(0, off + k), HelpfulnessLevel::Helpful, {"helpfulClear"});
                break;
        }
    }
    std::sort(f.ratings.begin(), f.ratings.end(), [](const RawRating& a, const RawRating& b) {
        return std::tie(a.noteId, a.raterId) < std::tie(b.noteId, b.raterId);
    });

    for (std::size_t i = 0; i < 40; ++i) {
        NoteStatusRecord s;
        s.noteId = f.notes[i].noteId;
        const std::int64_t last = kNow - kDay;
        switch (kinds[i]) {
            case Kind::Helpful:
            case Kind::HelpfulOneTag:
                s.currentStatus = Status::CurrentlyRatedHelpful;
                s.firstStatusAtMillis = kNow - 3 * kDay;
                break;
            case Kind::NotHelpful:
                s.currentStatus = Status::CurrentlyRatedNotHelpful;
                s.firstStatusAtMillis = kNow - 3 * kDay;
                break;
            default:
                s.currentStatus = Status::NeedMoreRatings;
                s.firstStatusAtMillis = last;
        }
        if (s.noteId == f.stabilized) {
            s.currentStatus = Status::CurrentlyRatedHelpful;
            s.firstStatusAtMillis = kNow - 20 * kDay;
        }
        if (s.noteId == f.recentHistory) {
            s.currentStatus = Status::CurrentlyRatedHelpful;
            s.firstStatusAtMillis = kNow - 5 * kDay;
        }
        s.lastUpdatedMillis = last;
        f.statuses.push_back(s);
    }
    return f;
}

void write_ranking_fixture(const RankingFixture& f, const fs::path& dir) {
    fs::create_directories(dir);
    write_notes(dir / "notes.tsv", f.notes);
    std::vector<std::string> a, b;
    for (std::size_t i = 0; i < f.ratings.size(); ++i) (i % 2 == 0 ? a : b).push_back(rating_row(f.ratings[i]));
    b.push_back(rating_row(f.ratings.front()));  // exact duplicate across shards
    write_lines(dir / "ratings_a.tsv", rating_header(), a);
    write_lines(dir / "ratings_b.tsv", rating_header(), b);
    write_statuses(dir / "status.tsv", f.statuses);
    std::vector<std::string> posts;
    for (const auto& p : f.posts) posts.push_back(p.postId + "\t" + p.text);
    write_lines(dir / "posts.tsv", "tweetId\ttext", posts);
}

// ---- cleaning -------------------------------------------------------------

CleaningFixture cleaning_fixture() {
    CleaningFixture f;
    Rng rng(20240601);
    const char* langs[] = {"en", "en", "es", "en", "fr", "en", "ja"};

    struct Category {
        std::size_t count;
        Status status;
        bool emptyNote;
        std::vector<std::vector<std::string>> tagChoices;  // raw status-table tags, rotated
        const char* rejectCause;                           // nullptr: survives
    };
    const std::vector<Category> categories = {
        {60, Status::CurrentlyRatedHelpful, false,
         {{"helpfulClear", "helpfulInformative"},
          {"helpfulGoodSources", "helpfulAddressesClaim"},
          {"helpfulImportantContext", "helpfulUniqueContext"},
          {"helpfulEmpathetic", "helpfulUnbiasedLanguage"}},
         nullptr},
        {30, Status::CurrentlyRatedNotHelpful, false,
         {{"notHelpfulIncorrect", "notHelpfulSourcesMissingOrUnreliable"},
          {"notHelpfulMissingKeyPoints", "notHelpfulHardToUnderstand"},
          {"notHelpfulOffTopic", "notHelpfulIrrelevantSources"},
          {"notHelpfulNoteNotNeeded", "notHelpfulSpamHarassmentOrAbuse"},
          {"notHelpfulArgumentativeOrBiased", "notHelpfulIncorrect"}},
         nullptr},
        {10, Status::CurrentlyRatedNotHelpful, false, {{"notHelpfulOpinionSpeculation", "notHelpfulIncorrect"}}, nullptr},
        {8, Status::CurrentlyRatedNotHelpful, false, {{"notHelpfulOther", "notHelpfulMissingKeyPoints"}}, nullptr},
        {12, Status::NeedMoreRatings, false, {{}}, "NEED_MORE_RATINGS"},
        {10, Status::CurrentlyRatedNotHelpful, false, {{"notHelpfulOther"}}, "OTHER_ONLY"},
        {8, Status::CurrentlyRatedHelpful, true, {{"helpfulClear", "helpfulInformative"}}, "EMPTY_NOTE"},
        {12, Status::CurrentlyRatedHelpful, false, {{"helpfulOther"}}, "OTHER_ONLY"},
    };

    std::vector<std::pair<std::size_t, std::size_t>> rows;  // (category, rotation index)
    for (std::size_t c = 0; c < categories.size(); ++c) {
        for (std::size_t k = 0; k < categories[c].count; ++k) rows.emplace_back(c, k);
    }
    rng.shuffle(rows);

    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& [c, k] = rows[i];
        const auto& cat = categories[c];
        RawNote note;
        note.noteId = id("c", i + 1, 3);
        note.postId = id("q", i / 3 + 1, 3);
        note.createdAtMillis = kNow - 40 * kDay + static_cast<std::int64_t>(i) * 60000;
        note.summary = cat.emptyNote ? (i % 2 == 0 ? "" : "   ") : "Context for " + note.noteId + " with details";
        note.language = langs[rng.index(7)];
        f.notes.push_back(note);

        NoteStatusRecord s;
        s.noteId = note.noteId;
        s.currentStatus = cat.status;
        s.lastUpdatedMillis = kNow - 2 * kDay;
        s.firstStatusAtMillis = cat.status == Status::NeedMoreRatings ? s.lastUpdatedMillis : kNow - 10 * kDay;
        s.tags = cat.tagChoices[k % cat.tagChoices.size()];
        f.statuses.push_back(s);

        if (cat.rejectCause) {
            ++f.rejectsByCause[cat.rejectCause];
        } else {
            ReasonSet reasons;
            bool merged = false, other = false;
            for (const auto& t : s.tags) {
                if (t == "notHelpfulOpinionSpeculation") {
                    reasons.set(index_of(ReasonTag::OpinionSpeculationOrBias));
                    merged = true;
                } else if (t == "notHelpfulOther") {
                    other = true;
                } else {
                    reasons.set(index_of(*tag_from_wire(t)));
                }
            }
            f.opinionMerged += merged;
            f.otherStripped += other;
            const auto label = cat.status == Status::CurrentlyRatedHelpful ? Helpfulness::Helpful : Helpfulness::NotHelpful;
            f.survivors.emplace(note.noteId, std::make_pair(label, reasons));
        }

        // Two ratings per note; they do not drive labels when the status table has tags.
        for (int r = 0; r < 2; ++r) {
            const auto level = cat.status == Status::CurrentlyRatedNotHelpful ? HelpfulnessLevel::NotHelpful
                                                                               : HelpfulnessLevel::Helpful;
            f.ratings.push_back(rating(note.noteId, id("u", rng.index(40) + 1, 2) + (r ? "b" : "a"),
                                       note.createdAtMillis + 1000 + r, level, {}));
        }
    }
    for (int k = 0; k < 3; ++k) {
        f.ratings.push_back(rating("zz-missing-" + std::to_string(k), "u01a", kNow - kDay, HelpfulnessLevel::Helpful, {}));
    }
    f.orphanRatings = 3;
    f.ratings.push_back(f.ratings[5]);
    f.ratings.push_back(f.ratings[17]);
    f.duplicateRatings = 2;
    return f;
}

void write_cleaning_fixture(const CleaningFixture& f, const fs::path& dir) {
    fs::create_directories(dir);
    write_notes(dir / "notes.tsv", f.notes);
    std::vector<std::string> rows;
    for (const auto& r : f.ratings) rows.push_back(rating_row(r));
    write_lines(dir / "ratings.tsv", rating_header(), rows);
    write_statuses(dir / "status.tsv", f.statuses);
}

// ---- definition search ----------------------------------------------------

const std::array<std::array<std::string_view, 3>, kReasonCount>& cue_words() {
    static const std::array<std::array<std::string_view, 3>, kReasonCount> cues = {{
        {"directly", "rebuts", "answers"},            // AddressesClaim
        {"plainly", "simply", "concise"},             // Clear
        {"kindly", "gently", "respectful"},           // Empathetic
        {"peer-reviewed", "official", "archived"},    // GoodSources
        {"background", "timeline", "history"},        // ImportantContext
        {"statistics", "figures", "data"},            // Informative
        {"neutral", "balanced", "impartial"},         // UnbiasedLanguage
        {"overlooked", "rarely", "unreported"},       // UniqueContext
        {"ridiculous", "idiots", "obviously"},        // ArgumentativeOrBiased
        {"convoluted", "garbled", "jargon"},          // HardToUnderstand
        {"wrong", "false", "fabricated"},             // Incorrect
        {"unrelated", "tangential", "mismatched"},    // IrrelevantSources
        {"omits", "ignores", "skips"},                // MissingKeyPoints
        {"satire", "joke", "harmless"},               // NoteNotNeeded
        {"sports", "weather", "recipes"},             // OffTopic
        {"probably", "guess", "suspect"},             // OpinionSpeculationOrBias
        {"unsourced", "blog", "anonymous"},           // SourcesMissingOrUnreliable
        {"insult", "scam", "harass"},                 // SpamHarassmentOrAbuse
    }};
    return cues;
}

std::vector<DatasetExample> apo_examples(std::size_t n, std::uint64_t seed, Split split) {
    Rng rng(seed);
    std::vector<DatasetExample> out;
    for (std::size_t i = 0; i < n; ++i) {
        DatasetExample e;
        e.noteId = (split == Split::Dev ? "d" : "t") + id("", i + 1, 3);
        e.postId = "post-" + e.noteId;
        e.language = "en";
        e.split = split;
        e.label = rng.uniform01() < 0.5 ? Helpfulness::Helpful : Helpfulness::NotHelpful;
        const std::size_t base = e.label == Helpfulness::Helpful ? 0 : kHelpfulReasonCount;
        const std::size_t span = e.label == Helpfulness::Helpful ? kHelpfulReasonCount : kReasonCount - kHelpfulReasonCount;
        const std::size_t first = base + rng.index(span);
        e.reasons.set(first);
        if (rng.uniform01() < 0.5) {
            std::size_t second = base + rng.index(span);
            if (second != first) e.reasons.set(second);
        }
        e.postText = "Claim " + e.postId + " about a public event";
        std::string note = "The note";
        for (auto t : to_tags(e.reasons)) note += " " + std::string(cue_words()[index_of(t)][rng.index(3)]);
        note += " explains the event.";
        e.noteText = note;
        out.push_back(std::move(e));
    }
    return out;
}

// ---- transfer -------------------------------------------------------------

std::vector<SufficiencyExample> sufficiency_fixture() {
    std::vector<SufficiencyExample> out;
    for (std::size_t i = 0; i < 20; ++i) {
        SufficiencyExample e;
        e.id = id("s", i + 1, 2);
        e.gold = i % 5 < 3 ? Sufficiency::EnoughInfo : Sufficiency::NotEnoughInfo;
        e.claim = "Claim " + e.id + " states a measurable fact";
        e.evidence = e.gold == Sufficiency::EnoughInfo ? "The cited report confirms the figure in " + e.id
                                                       : "The passage is silent on the figure in " + e.id;
        out.push_back(e);
    }
    return out;
}

std::vector<FcExample> factcheck_fixture() {
    constexpr FcLabel labels[] = {FcLabel::Supports, FcLabel::Refutes, FcLabel::NotEnoughInfo, FcLabel::Disputed};
    std::vector<FcExample> out;
    for (std::size_t i = 0; i < 20; ++i) {
        FcExample e;
        e.id = id("f", i + 1, 2);
        e.gold = labels[i % 4];
        e.claim = "Claim " + e.id + " [expected " + std::string(to_string(e.gold)) + "]";
        for (std::size_t k = 0; k < 2; ++k) {
            EvidenceItem item;
            item.text = "Evidence " + std::to_string(k + 1) + " for " + e.id;
            item.helpfulness = k == 0 ? Helpfulness::Helpful : Helpfulness::NotHelpful;
            item.score = k == 0 ? 0.52 : -0.11;
            item.reasons.set(k == 0 ? index_of(ReasonTag::GoodSources) : index_of(ReasonTag::MissingKeyPoints));
            e.evidence.push_back(item);
        }
        out.push_back(e);
    }
    return out;
}

void write_sufficiency_jsonl(const fs::path& path, std::span<const SufficiencyExample> examples) {
    std::ofstream out(path, std::ios::binary);
    for (const auto& e : examples) {
        out << json{{"id", e.id}, {"claim", e.claim}, {"evidence", e.evidence},
                    {"label", e.gold == Sufficiency::EnoughInfo ? "EI" : "NEI"}}
                   .dump()
            << '\n';
    }
}

void write_factcheck_jsonl(const fs::path& path, std::span<const FcExample> examples) {
    std::ofstream out(path, std::ios::binary);
    for (const auto& e : examples) {
        json ev = json::array();
        for (const auto& item : e.evidence) {
            json reasons = json::array();
            for (auto t : to_tags(item.reasons)) reasons.push_back(wire_name(t));
            ev.push_back({{"text", item.text},
                          {"helpfulness", *item.helpfulness == Helpfulness::Helpful ? "HELPFUL" : "NOT_HELPFUL"},
                          {"score", *item.score},
                          {"reasons", reasons}});
        }
        out << json{{"id", e.id}, {"claim", e.claim}, {"evidences", ev}, {"label", to_string(e.gold)}}.dump() << '\n';
    }
}

}  // namespace notehelp::testing
