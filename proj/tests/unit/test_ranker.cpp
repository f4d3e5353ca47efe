#include <doctest.h>

#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "notehelp/error.hpp"
#include "notehelp/ranker.hpp"
#include "oracles.hpp"

using namespace notehelp;
using namespace notehelp::testing;

namespace {

constexpr std::int64_t kDay = 86400000;

RawRating tagged(std::string rater, HelpfulnessLevel level, std::vector<std::string> tags) {
    RawRating r;
    r.noteId = "n";
    r.raterId = std::move(rater);
    r.createdAtMillis = 1;
    r.level = level;
    r.tagFlags = std::move(tags);
    return r;
}

std::vector<RawRating> counted(std::initializer_list<std::pair<const char*, int>> counts) {
    std::vector<RawRating> out;
    int rater = 0;
    for (const auto& [tag, n] : counts) {
        for (int i = 0; i < n; ++i) out.push_back(tagged("u" + std::to_string(rater++), HelpfulnessLevel::Helpful, {tag}));
    }
    return out;
}

const NoteScore& by_id(const std::vector<NoteScore>& scores, std::string_view id) {
    for (const auto& s : scores) {
        if (s.noteId == id) return s;
    }
    throw Error("no score for " + std::string(id));
}

}  // namespace

TEST_SUITE("ranker") {

TEST_CASE("status rules") {
    CHECK(classify_status(0.50, 0.0, 0.60, 6) == Status::CurrentlyRatedHelpful);
    CHECK(classify_status(0.10, 0.0, 0.20, 3) == Status::NeedMoreRatings);
    CHECK(classify_status(-0.90, 1.0, -0.50, 10) == Status::CurrentlyRatedNotHelpful);
    CHECK(classify_status(0.00, 0.0, -0.05, 7) == Status::CurrentlyRatedNotHelpful);
    CHECK(classify_status(0.40, 0.0, 0.50, 9) == Status::NeedMoreRatings);
    CHECK(classify_status(-0.85, 1.0, 0.0, 9) == Status::NeedMoreRatings);
    CHECK(classify_status(0.0, 0.0, -0.04, 9) == Status::NeedMoreRatings);
    CHECK_THROWS_AS(classify_status(std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0, 9), Error);
}

TEST_CASE("status grid and monotonicity") {
    const double scores[] = {-1, -0.86, -0.85, -0.05, 0, 0.40, 0.41, 1};
    for (double f : {0.0, 1.0, -1.0}) {
        for (double u : {-0.05, -0.04, 0.0}) {
            for (std::size_t n : {4u, 5u, 100u}) {
                bool wasHelpful = false;
                for (double s : scores) {
                    const auto got = classify_status(s, f, u, n);
                    CHECK(got == status_oracle(s, f, u, n));
                    const bool helpful = got == Status::CurrentlyRatedHelpful;
                    CHECK_FALSE((wasHelpful && !helpful));
                    wasHelpful = helpful;
                }
            }
        }
    }
}

TEST_CASE("threshold validation") {
    Thresholds t;
    t.helpfulMin = -0.1;
    CHECK_THROWS_AS(t.validate(), UsageError);
    t = {};
    t.minRatings = 0;
    CHECK_THROWS_AS(t.validate(), UsageError);
}

TEST_CASE("tag assignment") {
    SUBCASE("count order") {
        const auto r = counted({{"helpfulClear", 5}, {"helpfulGoodSources", 3}, {"helpfulInformative", 1}});
        const auto a = assign_tags(r, Status::CurrentlyRatedHelpful);
        CHECK(a.topTags == std::vector<ReasonTag>{ReasonTag::Clear, ReasonTag::GoodSources});
        CHECK(a.status == Status::CurrentlyRatedHelpful);
        CHECK_FALSE(a.reverted);
    }
    SUBCASE("one qualifying tag reverts") {
        const auto r = counted({{"helpfulClear", 5}, {"helpfulGoodSources", 1}});
        const auto a = assign_tags(r, Status::CurrentlyRatedHelpful);
        CHECK(a.topTags.empty());
        CHECK(a.status == Status::NeedMoreRatings);
        CHECK(a.reverted);
    }
    SUBCASE("need more ratings is left alone") {
        const auto r = counted({{"helpfulClear", 5}, {"helpfulGoodSources", 3}});
        const auto a = assign_tags(r, Status::NeedMoreRatings);
        CHECK(a.topTags.empty());
        CHECK(a.status == Status::NeedMoreRatings);
        CHECK_FALSE(a.reverted);
    }
    SUBCASE("polarity and tie-breaks") {
        std::vector<RawRating> r = counted({{"helpfulUniqueContext", 3}, {"helpfulClear", 3}, {"helpfulEmpathetic", 3}});
        for (int i = 0; i < 4; ++i) r.push_back(tagged("x" + std::to_string(i), HelpfulnessLevel::NotHelpful, {"notHelpfulIncorrect"}));
        // Equal counts: consensus intercept decides, then the wire name.
        std::vector<double> consensus(kReasonCount, 0.0);
        consensus[index_of(ReasonTag::UniqueContext)] = 0.3;
        auto a = assign_tags(r, Status::CurrentlyRatedHelpful, consensus);
        CHECK(a.topTags == std::vector<ReasonTag>{ReasonTag::UniqueContext, ReasonTag::Clear});
        a = assign_tags(r, Status::CurrentlyRatedHelpful);
        CHECK(a.topTags == std::vector<ReasonTag>{ReasonTag::Clear, ReasonTag::Empathetic});
        a = assign_tags(r, Status::CurrentlyRatedNotHelpful);
        CHECK(a.status == Status::NeedMoreRatings);
        CHECK(a.topTags.empty());
    }
}

TEST_CASE("stabilization") {
    const std::int64_t now = 100 * kDay;
    NoteStatusRecord h;
    h.currentStatus = Status::CurrentlyRatedHelpful;
    h.firstStatusAtMillis = now - 20 * kDay;
    h.lastUpdatedMillis = now - kDay;
    CHECK(stabilize_status(&h, Status::CurrentlyRatedNotHelpful, now) == Status::CurrentlyRatedHelpful);
    h.firstStatusAtMillis = now - 14 * kDay;
    CHECK(stabilize_status(&h, Status::NeedMoreRatings, now) == Status::CurrentlyRatedHelpful);
    h.firstStatusAtMillis = now - 14 * kDay + 1;
    CHECK(stabilize_status(&h, Status::NeedMoreRatings, now) == Status::NeedMoreRatings);
    h.firstStatusAtMillis = now - 3 * kDay;
    CHECK(stabilize_status(&h, Status::CurrentlyRatedNotHelpful, now) == Status::CurrentlyRatedNotHelpful);
    h.currentStatus = Status::NeedMoreRatings;
    h.firstStatusAtMillis = now - 20 * kDay;
    CHECK(stabilize_status(&h, Status::CurrentlyRatedHelpful, now) == Status::CurrentlyRatedHelpful);
    CHECK(stabilize_status(nullptr, Status::CurrentlyRatedHelpful, now) == Status::CurrentlyRatedHelpful);
}

TEST_CASE("iso timestamps") {
    CHECK(parse_iso8601_millis("1970-01-02") == kDay);
    CHECK(parse_iso8601_millis("2024-06-01T00:00:00Z") == 1717200000000);
    CHECK(parse_iso8601_millis("2024-06-01T02:00:00+02:00") == 1717200000000);
    CHECK(parse_iso8601_millis("2024-06-01T00:00:00.250Z") == 1717200000250);
    CHECK_THROWS_AS(parse_iso8601_millis("yesterday"), Error);
    CHECK_THROWS_AS(parse_iso8601_millis("2024-13-01"), Error);
    CHECK_THROWS_AS(parse_iso8601_millis("2024-06-01T00:00:00.Z"), Error);
}

TEST_CASE("pipeline on the ranking fixture") {
    const auto f = ranking_fixture();
    const auto now = parse_iso8601_millis(f.now);
    const RankerConfig config;
    const auto pre = prescore(f.notes, f.ratings, config, 1);
    for (const auto& c : f.contrarians) CHECK(pre.rater_filtered(c));
    CHECK(pre.filteredRaters.size() == f.contrarians.size());
    for (const auto& fr : pre.filteredRaters) CHECK(fr.helpfulness < config.raterRetention);

    const auto scores = score(pre, f.notes, f.ratings, f.statuses, config, 1, now);
    CHECK(scores.size() == f.notes.size());

    const auto& helpful = by_id(scores, f.consensusHelpful);
    CHECK(helpful.status == Status::CurrentlyRatedHelpful);
    CHECK(helpful.topTags.size() == 2);
    CHECK(helpful.bounds.lower <= helpful.helpfulnessScore);
    CHECK(helpful.helpfulnessScore <= helpful.bounds.upper);

    const auto& four = by_id(scores, f.fourRatings);
    CHECK(four.status == Status::NeedMoreRatings);
    CHECK_FALSE(four.scored);
    CHECK(four.ratingCount == 4);

    const auto& revert = by_id(scores, f.tagRevert);
    CHECK(revert.tagReverted);
    CHECK(revert.status == Status::NeedMoreRatings);
    CHECK(revert.helpfulnessScore > config.thresholds.helpfulMin);

    const auto& old = by_id(scores, f.stabilized);
    CHECK(old.stabilized);
    CHECK(old.status == Status::CurrentlyRatedHelpful);
    CHECK(old.topTags.size() == 2);
    const auto& recent = by_id(scores, f.recentHistory);
    CHECK_FALSE(recent.stabilized);
    CHECK(recent.status == Status::NeedMoreRatings);

    for (const auto& s : scores) {
        if (s.status == Status::CurrentlyRatedHelpful) CHECK(s.topTags.size() == 2);
        CHECK(s.topTags.size() != 1);
        const auto want = s.status == Status::CurrentlyRatedHelpful ? Polarity::Helpful : Polarity::NotHelpful;
        for (auto t : s.topTags) CHECK(polarity_of(t) == want);
    }

    const auto labels = aggregate_reason_labels(scores);
    for (const auto& s : scores) {
        const auto it = labels.find(s.noteId);
        if (s.status == Status::NeedMoreRatings) {
            CHECK(it == labels.end());
            continue;
        }
        REQUIRE(it != labels.end());
        CHECK((it->second.label == Helpfulness::Helpful) == (s.status == Status::CurrentlyRatedHelpful));
        for (auto t : s.topTags) CHECK(it->second.reasons[index_of(t)]);
        const auto wrong = polarity_mask(it->second.label == Helpfulness::Helpful ? Polarity::NotHelpful : Polarity::Helpful);
        CHECK((it->second.reasons & wrong).none());
    }

    // Pure function of its inputs.
    const auto again = score(prescore(f.notes, f.ratings, config, 1), f.notes, f.ratings, f.statuses, config, 1, now);
    REQUIRE(again.size() == scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) CHECK(to_json(again[i]).dump() == to_json(scores[i]).dump());
}

TEST_CASE("no rater filtered when everyone agrees") {
    std::vector<RawNote> notes;
    std::vector<RawRating> ratings;
    for (int n = 0; n < 12; ++n) {  // raters need 10 ratings to be kept
        RawNote note;
        note.noteId = "n" + std::to_string(n);
        note.summary = "s";
        notes.push_back(note);
        for (int u = 0; u < 12; ++u) {
            auto r = tagged("u" + std::to_string(10 + u), n < 6 ? HelpfulnessLevel::Helpful : HelpfulnessLevel::NotHelpful, {});
            r.noteId = note.noteId;
            ratings.push_back(r);
        }
    }
    const auto pre = prescore(notes, ratings, {}, 3);
    CHECK(pre.filteredRaters.empty());
}

TEST_CASE("config round trip") {
    RankerConfig c;
    c.thresholds.helpfulMin = 0.5;
    c.mf.k = 2;
    c.minTagCount = 3;
    const auto back = ranker_config_from_json(to_json(c));
    CHECK(back.thresholds.helpfulMin == 0.5);
    CHECK(back.mf.k == 2);
    CHECK(back.minTagCount == 3);
    CHECK(back.diligenceTags == RankerConfig::default_diligence_tags());
}

}
