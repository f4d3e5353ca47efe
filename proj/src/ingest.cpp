#include "notehelp/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>
#include <set>
#include <tuple>

#include "notehelp/error.hpp"
#include "notehelp/rng.hpp"
#include "tsv.hpp"

namespace notehelp {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::optional<std::size_t> first_of(const detail::TsvTable& t, std::initializer_list<std::string_view> names) {
    for (auto n : names) {
        if (auto i = t.find(n)) return i;
    }
    return std::nullopt;
}

std::size_t require_any(const detail::TsvTable& t, std::initializer_list<std::string_view> names) {
    if (auto i = first_of(t, names)) return *i;
    return t.require(*names.begin());
}

Reject bad_row(const detail::TsvTable& t, std::size_t line, std::string detail) {
    return Reject{t.path().string(), line, "", "BAD_ROW", std::move(detail)};
}

std::optional<NoteClassification> classification_from(std::string_view s) {
    if (s == "MISINFORMED_OR_POTENTIALLY_MISLEADING" || s == "MISLEADING") {
        return NoteClassification::Misleading;
    }
    if (s == "NOT_MISLEADING") return NoteClassification::NotMisleading;
    return std::nullopt;
}

}  // namespace

json to_json(const Reject& r) {
    return json{{"source", r.source}, {"line", r.line}, {"id", r.id}, {"cause", r.cause}, {"detail", r.detail}};
}

std::string_view to_string(HelpfulnessLevel level) {
    switch (level) {
        case HelpfulnessLevel::Helpful: return "HELPFUL";
        case HelpfulnessLevel::SomewhatHelpful: return "SOMEWHAT_HELPFUL";
        case HelpfulnessLevel::NotHelpful: return "NOT_HELPFUL";
    }
    return "HELPFUL";
}

std::optional<HelpfulnessLevel> level_from_string(std::string_view s) {
    if (s == "HELPFUL") return HelpfulnessLevel::Helpful;
    if (s == "SOMEWHAT_HELPFUL") return HelpfulnessLevel::SomewhatHelpful;
    if (s == "NOT_HELPFUL") return HelpfulnessLevel::NotHelpful;
    return std::nullopt;
}

std::string_view to_string(Helpfulness h) {
    return h == Helpfulness::Helpful ? "HELPFUL" : "NOT_HELPFUL";
}

std::string_view to_string(Split s) {
    switch (s) {
        case Split::Unassigned: return "UNASSIGNED";
        case Split::Train: return "TRAIN";
        case Split::Dev: return "DEV";
        case Split::Test: return "TEST";
    }
    return "UNASSIGNED";
}

std::string_view to_string(LabelSource s) {
    return s == LabelSource::StatusTable ? "status_table" : "ranker";
}

Parsed<RawNote> parse_notes_table(const std::filesystem::path& path) {
    detail::TsvTable t(path);
    const auto cId = t.require("noteId");
    const auto cPost = require_any(t, {"tweetId", "postId"});
    const auto cCreated = t.require("createdAtMillis");
    const auto cClass = t.require("classification");
    const auto cSummary = t.require("summary");
    const auto cLang = first_of(t, {"language", "lang"});

    Parsed<RawNote> out;
    std::set<std::string, std::less<>> seen;
    std::vector<std::string_view> f;
    std::size_t line = 0;
    while (t.next(f, line)) {
        if (f.size() < t.header().size()) {
            out.rejects.push_back(bad_row(t, line, "expected " + std::to_string(t.header().size()) +
                                                       " fields, got " + std::to_string(f.size())));
            continue;
        }
        RawNote n;
        n.noteId = std::string(trim(f[cId]));
        n.postId = std::string(trim(f[cPost]));
        const auto created = detail::parse_int(trim(f[cCreated]));
        const auto cls = classification_from(trim(f[cClass]));
        if (n.noteId.empty() || !created || *created <= 0 || !cls) {
            auto r = bad_row(t, line, "invalid noteId, createdAtMillis or classification");
            r.id = n.noteId;
            out.rejects.push_back(std::move(r));
            continue;
        }
        if (!seen.insert(n.noteId).second) {
            out.rejects.push_back(Reject{path.string(), line, n.noteId, "DUPLICATE_NOTE", "noteId repeated"});
            continue;
        }
        n.createdAtMillis = *created;
        n.classification = *cls;
        n.summary = std::string(f[cSummary]);
        if (cLang && !trim(f[*cLang]).empty()) n.language = std::string(trim(f[*cLang]));
        out.rows.push_back(std::move(n));
    }
    return out;
}

Parsed<RawRating> parse_ratings_table(const std::filesystem::path& path) {
    detail::TsvTable t(path);
    const auto cNote = t.require("noteId");
    const auto cRater = require_any(t, {"raterParticipantId", "raterId"});
    const auto cCreated = t.require("createdAtMillis");
    const auto cLevel = first_of(t, {"helpfulnessLevel"});
    const auto cHelpful = t.find("helpful");
    const auto cNotHelpful = t.find("notHelpful");
    if (!cLevel && !(cHelpful && cNotHelpful)) t.require("helpfulnessLevel");

    struct TagColumn {
        std::size_t column;
        std::string name;
        Polarity polarity;
    };
    std::vector<TagColumn> tagColumns;
    for (std::size_t i = 0; i < t.header().size(); ++i) {
        if (auto m = classify_raw_tag(t.header()[i])) tagColumns.push_back({i, t.header()[i], m->polarity});
    }

    Parsed<RawRating> out;
    std::vector<std::string_view> f;
    std::size_t line = 0;
    while (t.next(f, line)) {
        if (f.size() < t.header().size()) {
            out.rejects.push_back(bad_row(t, line, "expected " + std::to_string(t.header().size()) +
                                                       " fields, got " + std::to_string(f.size())));
            continue;
        }
        RawRating r;
        r.noteId = std::string(trim(f[cNote]));
        r.raterId = std::string(trim(f[cRater]));
        const auto created = detail::parse_int(trim(f[cCreated]));
        std::optional<HelpfulnessLevel> level;
        if (cLevel && !trim(f[*cLevel]).empty()) {
            level = level_from_string(trim(f[*cLevel]));
        } else if (cHelpful && cNotHelpful) {
            // Legacy rows carry binary helpful/notHelpful columns instead of a level.
            if (trim(f[*cHelpful]) == "1") level = HelpfulnessLevel::Helpful;
            else if (trim(f[*cNotHelpful]) == "1") level = HelpfulnessLevel::NotHelpful;
        }
        if (r.noteId.empty() || r.raterId.empty() || !created || *created <= 0 || !level) {
            auto rej = bad_row(t, line, "invalid noteId, raterId, createdAtMillis or helpfulnessLevel");
            rej.id = r.noteId;
            out.rejects.push_back(std::move(rej));
            continue;
        }
        r.createdAtMillis = *created;
        r.level = *level;
        bool mixed = false;
        for (const auto& tc : tagColumns) {
            if (trim(f[tc.column]) != "1") continue;
            if (r.level == HelpfulnessLevel::Helpful && tc.polarity == Polarity::NotHelpful) mixed = true;
            if (r.level == HelpfulnessLevel::NotHelpful && tc.polarity == Polarity::Helpful) mixed = true;
            r.tagFlags.push_back(tc.name);
        }
        if (mixed) {
            out.rejects.push_back(Reject{path.string(), line, r.noteId, "MIXED_POLARITY_TAGS",
                                         "tags contradict level " + std::string(to_string(r.level))});
            continue;
        }
        std::sort(r.tagFlags.begin(), r.tagFlags.end());
        out.rows.push_back(std::move(r));
    }
    return out;
}

Parsed<NoteStatusRecord> parse_status_table(const std::filesystem::path& path) {
    detail::TsvTable t(path);
    const auto cNote = t.require("noteId");
    const auto cStatus = t.require("currentStatus");
    const auto cLast = require_any(t, {"timestampMillisOfCurrentStatus", "lastUpdatedMillis"});
    const auto cFirst = first_of(t, {"timestampMillisOfFirstNonNMRStatus", "firstStatusAtMillis"});
    const auto cTag1 = first_of(t, {"firstTag"});
    const auto cTag2 = first_of(t, {"secondTag"});

    Parsed<NoteStatusRecord> out;
    std::set<std::string, std::less<>> seen;
    std::vector<std::string_view> f;
    std::size_t line = 0;
    while (t.next(f, line)) {
        if (f.size() < t.header().size()) {
            out.rejects.push_back(bad_row(t, line, "short row"));
            continue;
        }
        NoteStatusRecord s;
        s.noteId = std::string(trim(f[cNote]));
        const auto status = status_from_string(trim(f[cStatus]));
        const auto last = detail::parse_int(trim(f[cLast]));
        std::optional<std::int64_t> first;
        if (cFirst) first = detail::parse_int(trim(f[*cFirst]));
        if (s.noteId.empty() || !status || !last) {
            auto r = bad_row(t, line, "invalid noteId, currentStatus or timestamp");
            r.id = s.noteId;
            out.rejects.push_back(std::move(r));
            continue;
        }
        s.currentStatus = *status;
        s.lastUpdatedMillis = *last;
        // Notes that never left NEED_MORE_RATINGS have no first non-NMR timestamp.
        s.firstStatusAtMillis = (first && *first > 0) ? *first : *last;
        if (s.firstStatusAtMillis > s.lastUpdatedMillis) {
            out.rejects.push_back(Reject{path.string(), line, s.noteId, "BAD_ROW",
                                         "first status timestamp after last update"});
            continue;
        }
        for (auto c : {cTag1, cTag2}) {
            if (c && !trim(f[*c]).empty()) s.tags.emplace_back(trim(f[*c]));
        }
        if (!seen.insert(s.noteId).second) {
            out.rejects.push_back(Reject{path.string(), line, s.noteId, "DUPLICATE_STATUS", "noteId repeated"});
            continue;
        }
        out.rows.push_back(std::move(s));
    }
    return out;
}

Parsed<PostText> parse_posts_table(const std::filesystem::path& path) {
    detail::TsvTable t(path);
    const auto cId = require_any(t, {"tweetId", "postId"});
    const auto cText = t.require("text");
    Parsed<PostText> out;
    std::vector<std::string_view> f;
    std::size_t line = 0;
    while (t.next(f, line)) {
        if (f.size() < t.header().size() || trim(f[cId]).empty()) {
            out.rejects.push_back(bad_row(t, line, "short row or empty id"));
            continue;
        }
        out.rows.push_back({std::string(trim(f[cId])), std::string(f[cText])});
    }
    return out;
}

std::vector<RawRating> dedupe_ratings(std::vector<RawRating> ratings, std::vector<Reject>* rejects) {
    // Latest first within each (noteId, raterId); the full-row tie-break keeps
    // the result independent of input order.
    std::sort(ratings.begin(), ratings.end(), [](const RawRating& a, const RawRating& b) {
        return std::tie(a.noteId, a.raterId, b.createdAtMillis, a.level, a.tagFlags) <
               std::tie(b.noteId, b.raterId, a.createdAtMillis, b.level, b.tagFlags);
    });
    std::vector<RawRating> out;
    out.reserve(ratings.size());
    for (auto& r : ratings) {
        if (!out.empty() && out.back().noteId == r.noteId && out.back().raterId == r.raterId) {
            if (rejects) {
                const bool exact = out.back() == r;
                rejects->push_back(Reject{"merge", 0, r.noteId, exact ? "DUPLICATE_ROW" : "SUPERSEDED_RATING",
                                          "rater " + r.raterId + " at " + std::to_string(r.createdAtMillis)});
            }
            continue;
        }
        out.push_back(std::move(r));
    }
    return out;
}

Parsed<RawRating> merge_rating_shards(std::span<const std::filesystem::path> paths) {
    if (paths.empty()) throw Error("merge_rating_shards: no shard paths given");

    std::vector<std::vector<std::string>> headers;
    for (const auto& p : paths) headers.push_back(detail::TsvTable(p).header());
    for (std::size_t i = 1; i < paths.size(); ++i) {
        if (headers[i] != headers[0]) {
            throw Error("rating shard schema mismatch between " + paths[0].string() + " and " + paths[i].string());
        }
    }

    std::vector<std::future<Parsed<RawRating>>> jobs;
    for (const auto& p : paths) {
        jobs.push_back(std::async(std::launch::async, [p] { return parse_ratings_table(p); }));
    }
    Parsed<RawRating> out;
    std::vector<RawRating> all;
    for (auto& j : jobs) {
        auto part = j.get();
        std::move(part.rows.begin(), part.rows.end(), std::back_inserter(all));
        std::move(part.rejects.begin(), part.rejects.end(), std::back_inserter(out.rejects));
    }
    out.rows = dedupe_ratings(std::move(all), &out.rejects);
    return out;
}

JoinResult join_tables(std::span<const RawNote> notes, std::span<const RawRating> ratings,
                       std::span<const NoteStatusRecord> statuses) {
    std::map<std::string_view, const NoteStatusRecord*> statusById;
    for (const auto& s : statuses) statusById.emplace(s.noteId, &s);
    std::map<std::string_view, std::vector<const RawRating*>> ratingsById;
    for (const auto& r : ratings) ratingsById[r.noteId].push_back(&r);

    std::vector<const RawNote*> sorted;
    for (const auto& n : notes) sorted.push_back(&n);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->noteId < b->noteId; });

    JoinResult out;
    std::set<std::string_view> noteIds;
    for (const auto* n : sorted) {
        noteIds.insert(n->noteId);
        auto it = statusById.find(n->noteId);
        if (it == statusById.end()) {
            out.report.notesWithoutStatus.push_back(n->noteId);
            continue;
        }
        JoinedRecord rec{*n, {}, *it->second};
        if (auto rit = ratingsById.find(n->noteId); rit != ratingsById.end()) {
            for (const auto* r : rit->second) rec.ratings.push_back(*r);
        }
        out.records.push_back(std::move(rec));
    }
    for (const auto& [id, rs] : ratingsById) {
        if (!noteIds.contains(id)) {
            out.report.orphanRatingNoteIds.emplace_back(id);
            out.report.orphanRatings += rs.size();
        }
    }
    for (const auto& [id, s] : statusById) {
        if (!noteIds.contains(id)) ++out.report.statusesWithoutNote;
    }
    return out;
}

namespace {

std::string post_text_for(const PostTextIndex& posts, std::string_view postId) {
    auto it = posts.find(postId);
    return it == posts.end() ? std::string() : it->second;
}

// Raw tag names that at least two ratings of matching polarity applied.
std::vector<std::string> qualified_raw_tags(std::span<const RawRating> ratings, Status status) {
    if (status == Status::NeedMoreRatings) return {};
    const Polarity want = status == Status::CurrentlyRatedHelpful ? Polarity::Helpful : Polarity::NotHelpful;
    std::map<std::string, int> counts;
    for (const auto& r : ratings) {
        for (const auto& tag : r.tagFlags) {
            auto m = classify_raw_tag(tag);
            if (m && m->polarity == want) ++counts[tag];
        }
    }
    std::vector<std::string> out;
    for (const auto& [tag, c] : counts) {
        if (c >= 2) out.push_back(tag);
    }
    return out;
}

}  // namespace

std::vector<LabeledRecord> label_from_status_table(std::span<const JoinedRecord> joined, const PostTextIndex& posts) {
    std::vector<LabeledRecord> out;
    out.reserve(joined.size());
    for (const auto& j : joined) {
        LabeledRecord rec{j.note, post_text_for(posts, j.note.postId), j.status.currentStatus, j.status.tags};
        // The public status table may not carry tags; fall back to the ratings.
        if (rec.rawReasons.empty()) rec.rawReasons = qualified_raw_tags(j.ratings, rec.status);
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<LabeledRecord> label_from_ranker(std::span<const JoinedRecord> joined, const AggregatedLabels& aggregated,
                                             const PostTextIndex& posts) {
    std::vector<LabeledRecord> out;
    out.reserve(joined.size());
    for (const auto& j : joined) {
        LabeledRecord rec{j.note, post_text_for(posts, j.note.postId), Status::NeedMoreRatings, {}};
        if (auto it = aggregated.find(j.note.noteId); it != aggregated.end()) {
            rec.status = it->second.label == Helpfulness::Helpful ? Status::CurrentlyRatedHelpful
                                                                   : Status::CurrentlyRatedNotHelpful;
            for (auto t : to_tags(it->second.reasons)) rec.rawReasons.emplace_back(wire_name(t));
        }
        out.push_back(std::move(rec));
    }
    return out;
}

CleanResult clean_dataset(std::span<const LabeledRecord> records) {
    CleanResult out;
    for (const auto& rec : records) {
        const auto& id = rec.note.noteId;
        if (trim(rec.note.summary).empty()) {
            out.rejects.push_back(Reject{"clean", 0, id, "EMPTY_NOTE", "note text is empty"});
            continue;
        }
        if (rec.status == Status::NeedMoreRatings) {
            out.rejects.push_back(Reject{"clean", 0, id, "NEED_MORE_RATINGS", "no final helpfulness status"});
            continue;
        }
        const Helpfulness label =
            rec.status == Status::CurrentlyRatedHelpful ? Helpfulness::Helpful : Helpfulness::NotHelpful;
        const Polarity want = label == Helpfulness::Helpful ? Polarity::Helpful : Polarity::NotHelpful;

        ReasonSet reasons;
        bool sawOther = false;
        for (const auto& raw : rec.rawReasons) {
            auto m = classify_raw_tag(raw);
            if (!m) continue;
            if (m->kind == RawTagKind::Other) sawOther = true;
            if (m->kind == RawTagKind::Canonical && m->polarity == want) reasons.set(index_of(*m->tag));
        }
        if (reasons.none()) {
            if (sawOther) {
                out.rejects.push_back(Reject{"clean", 0, id, "OTHER_ONLY", "only reason is the uninformative Other tag"});
            } else {
                out.rejects.push_back(Reject{"clean", 0, id, "NO_MATCHING_REASONS",
                                             "status " + std::string(to_string(rec.status)) +
                                                 " but no reason tag of that polarity"});
            }
            continue;
        }
        DatasetExample e;
        e.postId = rec.note.postId;
        e.noteId = id;
        e.postText = rec.postText;
        e.noteText = rec.note.summary;
        e.language = rec.note.language;
        e.label = label;
        e.reasons = reasons;
        out.examples.push_back(std::move(e));
    }
    return out;
}

LabeledRecord to_labeled_record(const DatasetExample& e) {
    LabeledRecord rec;
    rec.note.noteId = e.noteId;
    rec.note.postId = e.postId;
    rec.note.createdAtMillis = 1;
    rec.note.summary = e.noteText;
    rec.note.language = e.language;
    rec.postText = e.postText;
    rec.status = e.label == Helpfulness::Helpful ? Status::CurrentlyRatedHelpful : Status::CurrentlyRatedNotHelpful;
    for (auto t : to_tags(e.reasons)) rec.rawReasons.emplace_back(wire_name(t));
    return rec;
}

LanguageBucket language_bucket(std::string_view language) {
    std::string l(language);
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return (l == "en" || l.starts_with("en-") || l.starts_with("en_") || l == "english") ? LanguageBucket::English
                                                                                          : LanguageBucket::Other;
}

SplitResult stratified_split(std::vector<DatasetExample> examples, SplitRatios ratios, std::uint64_t seed) {
    if (ratios.train == 0 || ratios.dev == 0 || ratios.test == 0) {
        throw UsageError("split ratios must all be positive");
    }
    const std::array<unsigned, 3> r = {ratios.train, ratios.dev, ratios.test};
    const unsigned total = r[0] + r[1] + r[2];
    constexpr std::array<Split, 3> kSplits = {Split::Train, Split::Dev, Split::Test};

    std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& e = examples[i];
        strata[{static_cast<int>(language_bucket(e.language)), static_cast<int>(e.label)}].push_back(i);
    }

    SplitResult out;
    for (auto& [key, members] : strata) {
        std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
            return std::tie(examples[a].noteId, examples[a].postId) < std::tie(examples[b].noteId, examples[b].postId);
        });
        const std::size_t n = members.size();
        if (n < 3) {
            for (auto i : members) examples[i].split = Split::Train;
            out.warnings.push_back("stratum (" + std::string(key.first == 0 ? "ENGLISH" : "OTHER") + ", " +
                                   std::string(to_string(static_cast<Helpfulness>(key.second))) + ") has " +
                                   std::to_string(n) + " examples; all assigned to TRAIN");
            continue;
        }
        std::array<std::size_t, 3> counts{};
        std::array<std::size_t, 3> remainders{};
        std::size_t assigned = 0;
        for (int k = 0; k < 3; ++k) {
            counts[k] = n * r[k] / total;
            remainders[k] = n * r[k] % total;
            assigned += counts[k];
        }
        std::array<int, 3> order = {0, 1, 2};
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainders[a] > remainders[b]; });
        for (int k = 0; assigned < n; ++k, ++assigned) ++counts[order[k]];

        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(key.first * 2 + key.second)));
        rng.shuffle(members);
        std::size_t pos = 0;
        for (int k = 0; k < 3; ++k) {
            for (std::size_t c = 0; c < counts[k]; ++c) examples[members[pos++]].split = kSplits[k];
        }
    }
    out.examples = std::move(examples);
    return out;
}

std::array<std::size_t, 3> split_counts(std::span<const DatasetExample> examples) {
    std::array<std::size_t, 3> c{};
    for (const auto& e : examples) {
        if (e.split == Split::Train) ++c[0];
        else if (e.split == Split::Dev) ++c[1];
        else if (e.split == Split::Test) ++c[2];
    }
    return c;
}

std::size_t whitespace_token_count(std::string_view text) {
    std::size_t count = 0;
    bool inToken = false;
    for (unsigned char c : text) {
        const bool space = std::isspace(c) != 0;
        if (!space && !inToken) ++count;
        inToken = !space;
    }
    return count;
}

double DatasetStats::percent(std::size_t count, std::size_t total) const {
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(count) / static_cast<double>(total);
}

namespace {

LengthSummary summarize(std::vector<std::size_t> lengths) {
    LengthSummary s;
    if (lengths.empty()) return s;
    std::sort(lengths.begin(), lengths.end());
    const std::size_t n = lengths.size();
    s.min = lengths.front();
    s.max = lengths.back();
    s.mean = static_cast<double>(std::accumulate(lengths.begin(), lengths.end(), std::size_t{0})) /
             static_cast<double>(n);
    s.median = n % 2 == 1 ? static_cast<double>(lengths[n / 2])
                          : 0.5 * static_cast<double>(lengths[n / 2 - 1] + lengths[n / 2]);
    return s;
}

json to_json(const LengthSummary& s) {
    return json{{"mean", s.mean}, {"median", s.median}, {"min", s.min}, {"max", s.max}};
}

}  // namespace

DatasetStats dataset_stats(std::span<const DatasetExample> examples, const Tokenizer& tokenizer) {
    DatasetStats st;
    st.totalExamples = examples.size();

    struct PostAgg {
        std::size_t notes = 0;
        std::size_t helpful = 0;
        const std::string* text = nullptr;
    };
    std::map<std::string_view, PostAgg> posts;
    std::vector<std::size_t> noteLengths;
    for (const auto& e : examples) {
        auto& p = posts[e.postId];
        ++p.notes;
        if (e.label == Helpfulness::Helpful) ++p.helpful;
        if (p.text == nullptr || p.text->empty()) p.text = &e.postText;
        noteLengths.push_back(tokenizer(e.noteText));
        ++st.languages[e.language];
        for (auto t : to_tags(e.reasons)) ++st.reasons[std::string(wire_name(t))];
    }
    st.totalPosts = posts.size();
    std::vector<std::size_t> postLengths;
    for (const auto& [id, p] : posts) {
        ++st.notesPerPost[p.notes];
        if (p.helpful == p.notes) ++st.postsAllHelpful;
        else if (p.helpful == 0) ++st.postsAllUnhelpful;
        else ++st.postsMixed;
        postLengths.push_back(tokenizer(*p.text));
    }
    st.postTokens = summarize(std::move(postLengths));
    st.noteTokens = summarize(std::move(noteLengths));
    return st;
}

json to_json(const DatasetStats& s) {
    json perPost = json::object();
    for (const auto& [k, v] : s.notesPerPost) {
        perPost[std::to_string(k)] = {{"posts", v}, {"percent", s.percent(v, s.totalPosts)}};
    }
    json langs = json::object();
    for (const auto& [k, v] : s.languages) langs[k] = {{"examples", v}, {"percent", s.percent(v, s.totalExamples)}};
    json reasons = json::object();
    for (const auto& [k, v] : s.reasons) reasons[k] = v;
    return json{
        {"total_examples", s.totalExamples},
        {"total_posts", s.totalPosts},
        {"notes_per_post", perPost},
        {"post_helpfulness_composition",
         {{"all_helpful", {{"posts", s.postsAllHelpful}, {"percent", s.percent(s.postsAllHelpful, s.totalPosts)}}},
          {"all_unhelpful",
           {{"posts", s.postsAllUnhelpful}, {"percent", s.percent(s.postsAllUnhelpful, s.totalPosts)}}},
          {"mixed", {{"posts", s.postsMixed}, {"percent", s.percent(s.postsMixed, s.totalPosts)}}}}},
        {"token_lengths", {{"post", to_json(s.postTokens)}, {"note", to_json(s.noteTokens)}}},
        {"languages", langs},
        {"reasons", reasons},
    };
}

json to_json(const DatasetExample& e) {
    json reasons = json::array();
    for (auto t : to_tags(e.reasons)) reasons.push_back(wire_name(t));
    return json{{"post_id", e.postId},     {"note_id", e.noteId},     {"post_text", e.postText},
                {"note_text", e.noteText}, {"language", e.language},  {"label", to_string(e.label)},
                {"reasons", reasons},      {"split", to_string(e.split)}, {"post_missing", e.postMissing()}};
}

DatasetExample example_from_json(const json& j) {
    DatasetExample e;
    e.postId = j.at("post_id").get<std::string>();
    e.noteId = j.at("note_id").get<std::string>();
    e.postText = j.value("post_text", "");
    e.noteText = j.at("note_text").get<std::string>();
    e.language = j.value("language", "UNKNOWN");
    const auto label = j.at("label").get<std::string>();
    if (label == "HELPFUL") e.label = Helpfulness::Helpful;
    else if (label == "NOT_HELPFUL") e.label = Helpfulness::NotHelpful;
    else throw Error("example " + e.noteId + ": unknown label '" + label + "'");
    for (const auto& r : j.at("reasons")) {
        auto t = tag_from_wire(r.get<std::string>());
        if (!t) throw Error("example " + e.noteId + ": unknown reason '" + r.get<std::string>() + "'");
        e.reasons.set(index_of(*t));
    }
    const auto split = j.value("split", "UNASSIGNED");
    if (split == "TRAIN") e.split = Split::Train;
    else if (split == "DEV") e.split = Split::Dev;
    else if (split == "TEST") e.split = Split::Test;
    else e.split = Split::Unassigned;
    return e;
}

void write_examples_jsonl(const std::filesystem::path& path, std::span<const DatasetExample> examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& e : examples) out << to_json(e).dump() << '\n';
}

std::vector<DatasetExample> read_examples_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<DatasetExample> out;
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.empty()) continue;
        try {
            out.push_back(example_from_json(json::parse(line)));
        } catch (const json::exception& ex) {
            throw Error(path.string() + ":" + std::to_string(lineNo) + ": " + ex.what());
        }
    }
    return out;
}

void write_rejects_jsonl(const std::filesystem::path& path, std::span<const Reject> rejects) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& r : rejects) out << to_json(r).dump() << '\n';
}

}  // namespace notehelp
