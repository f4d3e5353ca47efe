#include "notehelp/ranker.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <set>

#include "notehelp/error.hpp"
#include "notehelp/rng.hpp"

namespace notehelp {

using nlohmann::json;

void Thresholds::validate() const {
    if (!(helpfulMin > notHelpfulBase)) throw UsageError("thresholds: helpfulMin must exceed notHelpfulBase");
    if (minRatings < 1) throw UsageError("thresholds: minRatings must be >= 1");
    if (stabilizationDays < 0) throw UsageError("thresholds: stabilizationDays must be >= 0");
}

Status classify_status(double score, double factorScore, double ucb, std::size_t ratingCount, const Thresholds& t) {
    if (!std::isfinite(score) || !std::isfinite(factorScore) || !std::isfinite(ucb)) {
        throw Error("classify_status: non-finite input");
    }
    if (ratingCount < t.minRatings) return Status::NeedMoreRatings;
    if (score > t.helpfulMin) return Status::CurrentlyRatedHelpful;
    if (score < t.notHelpfulBase - t.notHelpfulFactorWeight * std::abs(factorScore) || ucb < t.ucbMax) {
        return Status::CurrentlyRatedNotHelpful;
    }
    return Status::NeedMoreRatings;
}

ReasonSet RankerConfig::default_diligence_tags() {
    return to_set({ReasonTag::SourcesMissingOrUnreliable, ReasonTag::Incorrect, ReasonTag::IrrelevantSources});
}

json to_json(const RankerConfig& c) {
    json tags = json::array();
    for (auto t : to_tags(c.diligenceTags)) tags.push_back(wire_name(t));
    return json{{"thresholds",
                 {{"helpful_min", c.thresholds.helpfulMin},
                  {"not_helpful_base", c.thresholds.notHelpfulBase},
                  {"not_helpful_factor_weight", c.thresholds.notHelpfulFactorWeight},
                  {"ucb_max", c.thresholds.ucbMax},
                  {"min_ratings", c.thresholds.minRatings},
                  {"stabilization_days", c.thresholds.stabilizationDays}}},
                {"mf", to_json(c.mf)},
                {"min_rater_ratings", c.minRaterRatings},
                {"min_note_ratings", c.minNoteRatings},
                {"rater_retention", c.raterRetention},
                {"n_pseudo", c.nPseudo},
                {"min_tag_count", c.minTagCount},
                {"diligence_tags", tags}};
}

RankerConfig ranker_config_from_json(const json& j) {
    RankerConfig c;
    if (j.contains("thresholds")) {
        const auto& t = j.at("thresholds");
        c.thresholds.helpfulMin = t.value("helpful_min", c.thresholds.helpfulMin);
        c.thresholds.notHelpfulBase = t.value("not_helpful_base", c.thresholds.notHelpfulBase);
        c.thresholds.notHelpfulFactorWeight = t.value("not_helpful_factor_weight", c.thresholds.notHelpfulFactorWeight);
        c.thresholds.ucbMax = t.value("ucb_max", c.thresholds.ucbMax);
        c.thresholds.minRatings = t.value("min_ratings", c.thresholds.minRatings);
        c.thresholds.stabilizationDays = t.value("stabilization_days", c.thresholds.stabilizationDays);
    }
    if (j.contains("mf")) c.mf = mf_config_from_json(j.at("mf"));
    c.minRaterRatings = j.value("min_rater_ratings", c.minRaterRatings);
    c.minNoteRatings = j.value("min_note_ratings", c.minNoteRatings);
    c.raterRetention = j.value("rater_retention", c.raterRetention);
    c.nPseudo = j.value("n_pseudo", c.nPseudo);
    c.minTagCount = j.value("min_tag_count", c.minTagCount);
    if (j.contains("diligence_tags")) {
        c.diligenceTags.reset();
        for (const auto& name : j.at("diligence_tags")) {
            auto t = tag_from_wire(name.get<std::string>());
            if (!t) throw UsageError("config: unknown diligence tag " + name.get<std::string>());
            c.diligenceTags.set(index_of(*t));
        }
    }
    c.thresholds.validate();
    c.mf.validate();
    return c;
}

bool PrescoringOutput::rater_filtered(std::string_view raterId) const {
    return std::any_of(filteredRaters.begin(), filteredRaters.end(),
                       [&](const FilteredRater& f) { return f.raterId == raterId; });
}

namespace {

std::vector<RawRating> ratings_in_matrix(std::span<const RawRating> ratings, const SparseRatingMatrix& m) {
    std::vector<RawRating> out;
    for (const auto& r : ratings) {
        if (m.note_row(r.noteId) && m.rater_col(r.raterId)) out.push_back(r);
    }
    return out;
}

std::vector<RawRating> restrict_to_notes(std::span<const RawRating> ratings, std::span<const RawNote> notes) {
    if (notes.empty()) return {ratings.begin(), ratings.end()};
    std::set<std::string_view> ids;
    for (const auto& n : notes) ids.insert(n.noteId);
    std::vector<RawRating> out;
    for (const auto& r : ratings) {
        if (ids.contains(r.noteId)) out.push_back(r);
    }
    return out;
}

std::map<std::string, Status, std::less<>> point_statuses(const SparseRatingMatrix& m, const MfParams& p,
                                                          const Thresholds& t) {
    std::vector<std::size_t> counts(m.rows(), 0);
    for (const auto& e : m.entries) ++counts[e.row];
    std::map<std::string, Status, std::less<>> out;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        // No bounds exist yet, so the point estimate stands in for the UCB.
        out[m.noteIds[i]] = classify_status(p.noteIntercept[i], p.note_factor_score(i), p.noteIntercept[i], counts[i], t);
    }
    return out;
}

MfConfig seeded(const MfConfig& base, std::uint64_t seed, std::uint64_t stage) {
    MfConfig c = base;
    c.seed = mix_seed(seed, stage);
    return c;
}

}  // namespace

PrescoringOutput prescore(std::span<const RawNote> notes, std::span<const RawRating> ratings,
                          const RankerConfig& config, std::uint64_t seed) {
    if (ratings.empty()) throw Error("prescore: no ratings");
    config.thresholds.validate();
    const auto scoped = restrict_to_notes(ratings, notes);

    PrescoringOutput out;
    // 1. count filter
    const auto m = build_matrix(scoped, config.minRaterRatings, config.minNoteRatings);
    out.matrixRatings = ratings_in_matrix(scoped, m);
    // 2. initial fit and intermediate statuses
    out.initialParams = fit_mf(m, seeded(config.mf, seed, 1));
    out.intermediateStatus = point_statuses(m, out.initialParams, config.thresholds);
    // 3. rater helpfulness and filtering
    out.initialHelpfulness = rater_helpfulness(out.matrixRatings, out.intermediateStatus, config.raterRetention);
    for (const auto& id : out.initialHelpfulness.lowHelpfulness) {
        out.filteredRaters.push_back({id, out.initialHelpfulness.scores.at(id), "helpfulness below retention threshold"});
    }
    for (const auto& r : out.matrixRatings) {
        if (out.initialHelpfulness.retained(r.raterId)) out.filteredRatings.push_back(r);
    }
    // 4. refit on filtered data, tag-consensus fits, updated helpfulness
    const auto refined = build_matrix(out.filteredRatings, config.minRaterRatings, config.minNoteRatings);
    out.refinedParams = fit_mf(refined, seeded(config.mf, seed, 2));
    out.refinedStatus = point_statuses(refined, out.refinedParams, config.thresholds);
    out.refinedHelpfulness = rater_helpfulness(out.filteredRatings, out.refinedStatus, config.raterRetention);

    ReasonSet present;
    for (const auto& r : out.filteredRatings) present |= canonical_tags(r);
    std::vector<std::pair<ReasonTag, std::future<MfParams>>> fits;
    for (auto tag : to_tags(present)) {
        const auto cfg = seeded(config.mf, seed, 100 + index_of(tag));
        fits.emplace_back(tag, std::async(std::launch::async, [&out, tag, cfg] {
                              return tag_consensus_fit(out.filteredRatings, tag, cfg);
                          }));
    }
    for (auto& [tag, f] : fits) out.tagConsensus.emplace(tag, f.get());
    return out;
}

TagAssignment assign_tags(std::span<const RawRating> noteRatings, Status status, std::span<const double> consensus,
                          std::size_t minCount) {
    TagAssignment out;
    out.status = status;
    if (status == Status::NeedMoreRatings) return out;

    const ReasonSet mask =
        polarity_mask(status == Status::CurrentlyRatedHelpful ? Polarity::Helpful : Polarity::NotHelpful);
    std::array<std::size_t, kReasonCount> counts{};
    for (const auto& r : noteRatings) {
        const auto tags = canonical_tags(r) & mask;
        for (std::size_t i = 0; i < kReasonCount; ++i) counts[i] += tags.test(i) ? 1 : 0;
    }
    std::vector<ReasonTag> candidates;
    for (std::size_t i = 0; i < kReasonCount; ++i) {
        if (counts[i] >= minCount && counts[i] > 0) {
            candidates.push_back(tag_at(i));
            out.qualified.set(i);
        }
    }
    auto consensusOf = [&](ReasonTag t) { return consensus.empty() ? 0.0 : consensus[index_of(t)]; };
    std::sort(candidates.begin(), candidates.end(), [&](ReasonTag a, ReasonTag b) {
        if (counts[index_of(a)] != counts[index_of(b)]) return counts[index_of(a)] > counts[index_of(b)];
        if (consensusOf(a) != consensusOf(b)) return consensusOf(a) > consensusOf(b);
        return wire_name(a) < wire_name(b);
    });
    if (candidates.size() < 2) {
        out.status = Status::NeedMoreRatings;
        out.reverted = true;
        out.qualified.reset();
        return out;
    }
    out.topTags = {candidates[0], candidates[1]};
    return out;
}

Status stabilize_status(const NoteStatusRecord* history, Status fresh, std::int64_t nowMillis, const Thresholds& t) {
    if (history == nullptr || history->currentStatus == Status::NeedMoreRatings) return fresh;
    const std::int64_t window = static_cast<std::int64_t>(t.stabilizationDays) * 24 * 60 * 60 * 1000;
    if (nowMillis - history->firstStatusAtMillis >= window) return history->currentStatus;
    return fresh;
}

std::vector<NoteScore> score(const PrescoringOutput& pre, std::span<const RawNote> notes,
                             std::span<const RawRating> ratings, std::span<const NoteStatusRecord> history,
                             const RankerConfig& config, std::uint64_t seed, std::int64_t nowMillis) {
    config.thresholds.validate();
    // 1. refresh: newest ratings minus raters filtered during prescoring
    std::vector<RawRating> fresh;
    for (const auto& r : restrict_to_notes(ratings, notes)) {
        if (!pre.rater_filtered(r.raterId)) fresh.push_back(r);
    }
    const auto m = build_matrix(fresh, config.minRaterRatings, config.minNoteRatings);
    // 2. main model
    const auto params = fit_mf(m, seeded(config.mf, seed, 3));
    // 3. diligence model (optional when no rating carries a low-diligence tag)
    std::optional<MfParams> diligence;
    try {
        diligence = tag_consensus_fit(ratings_in_matrix(fresh, m), config.diligenceTags, seeded(config.mf, seed, 4));
    } catch (const Error&) {
        diligence.reset();
    }
    // 4. bounds
    const auto bounds = confidence_bounds(m, params, config.mf, config.nPseudo);

    std::map<std::string_view, std::vector<RawRating>> byNote;
    for (const auto& r : fresh) byNote[r.noteId].push_back(r);
    std::map<std::string_view, const NoteStatusRecord*> historyById;
    for (const auto& h : history) historyById[h.noteId] = &h;

    std::set<std::string> noteIds;
    for (const auto& n : notes) noteIds.insert(n.noteId);
    if (notes.empty()) {
        for (const auto& r : fresh) noteIds.insert(r.noteId);
    }

    std::vector<NoteScore> out;
    out.reserve(noteIds.size());
    for (const auto& id : noteIds) {
        NoteScore s;
        s.noteId = id;
        const auto rit = byNote.find(id);
        const std::span<const RawRating> noteRatings =
            rit == byNote.end() ? std::span<const RawRating>{} : std::span<const RawRating>(rit->second);
        s.ratingCount = noteRatings.size();

        Status status = Status::NeedMoreRatings;
        if (auto row = m.note_row(id)) {
            s.scored = true;
            s.helpfulnessScore = params.noteIntercept[*row];
            s.factorScore = params.note_factor_score(*row);
            s.bounds = bounds.notes[*row];
            status = classify_status(s.helpfulnessScore, s.factorScore, s.bounds.upper, s.ratingCount, config.thresholds);
        }
        if (diligence) {
            if (auto it = std::find(diligence->noteIds.begin(), diligence->noteIds.end(), id);
                it != diligence->noteIds.end()) {
                s.diligenceScore = diligence->noteIntercept[static_cast<std::size_t>(it - diligence->noteIds.begin())];
            }
        }
        // 5. stabilization
        const auto hit = historyById.find(id);
        const Status stable = stabilize_status(hit == historyById.end() ? nullptr : hit->second, status, nowMillis,
                                               config.thresholds);
        s.stabilized = stable != status;
        // 6. explanation tags
        std::array<double, kReasonCount> consensus{};
        for (const auto& [tag, p] : pre.tagConsensus) {
            if (auto it = std::find(p.noteIds.begin(), p.noteIds.end(), id); it != p.noteIds.end()) {
                consensus[index_of(tag)] = p.noteIntercept[static_cast<std::size_t>(it - p.noteIds.begin())];
            }
        }
        auto tags = assign_tags(noteRatings, stable, consensus, config.minTagCount);
        s.status = tags.status;
        s.topTags = std::move(tags.topTags);
        s.qualifiedTags = tags.qualified;
        s.tagReverted = tags.reverted;
        out.push_back(std::move(s));
    }
    return out;
}

AggregatedLabels aggregate_reason_labels(std::span<const NoteScore> scores) {
    AggregatedLabels out;
    for (const auto& s : scores) {
        if (s.status == Status::NeedMoreRatings) continue;
        AggregatedLabel l;
        l.label = s.status == Status::CurrentlyRatedHelpful ? Helpfulness::Helpful : Helpfulness::NotHelpful;
        const auto mask = polarity_mask(l.label == Helpfulness::Helpful ? Polarity::Helpful : Polarity::NotHelpful);
        l.reasons = (to_set(s.topTags) | s.qualifiedTags) & mask;
        out.emplace(s.noteId, l);
    }
    return out;
}

json to_json(const NoteScore& s) {
    json tags = json::array();
    for (auto t : s.topTags) tags.push_back(wire_name(t));
    json j{{"note_id", s.noteId}};
    if (s.scored) {
        j["score"] = s.helpfulnessScore;
        j["factor"] = s.factorScore;
        j["lcb"] = s.bounds.lower;
        j["ucb"] = s.bounds.upper;
    } else {
        j["score"] = nullptr;
        j["factor"] = nullptr;
        j["lcb"] = nullptr;
        j["ucb"] = nullptr;
    }
    j["n_ratings"] = s.ratingCount;
    j["status"] = to_string(s.status);
    j["tags"] = tags;
    return j;
}

void write_scores_jsonl(const std::filesystem::path& path, std::span<const NoteScore> scores) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& s : scores) out << to_json(s).dump() << '\n';
}

std::int64_t parse_iso8601_millis(std::string_view text) {
    using namespace std::chrono;
    auto fail = [&]() -> std::int64_t { throw UsageError("invalid ISO-8601 timestamp '" + std::string(text) + "'"); };
    auto num = [&](std::size_t pos, std::size_t len) {
        if (pos + len > text.size()) fail();
        int v = 0;
        auto [p, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, v);
        if (ec != std::errc{} || p != text.data() + pos + len) fail();
        return v;
    };
    if (text.size() < 10 || text[4] != '-' || text[7] != '-') fail();
    const year_month_day ymd{year{num(0, 4)}, month{static_cast<unsigned>(num(5, 2))},
                             day{static_cast<unsigned>(num(8, 2))}};
    if (!ymd.ok()) fail();
    std::int64_t ms = duration_cast<milliseconds>(sys_days{ymd}.time_since_epoch()).count();
    std::size_t pos = 10;
    if (pos < text.size() && (text[pos] == 'T' || text[pos] == ' ')) {
        const int hh = num(pos + 1, 2);
        if (pos + 3 >= text.size() || text[pos + 3] != ':') fail();
        const int mm = num(pos + 4, 2);
        int ss = 0;
        pos += 6;
        if (pos < text.size() && text[pos] == ':') {
            ss = num(pos + 1, 2);
            pos += 3;
        }
        int frac = 0;
        if (pos < text.size() && text[pos] == '.') {
            std::size_t digits = 0;
            ++pos;
            while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
                if (digits < 3) frac = frac * 10 + (text[pos] - '0');
                ++digits;
                ++pos;
            }
            if (digits == 0) fail();
            for (; digits < 3; ++digits) frac *= 10;
        }
        if (hh > 23 || mm > 59 || ss > 60) fail();
        ms += ((hh * 60LL + mm) * 60LL + ss) * 1000LL + frac;
        if (pos < text.size()) {
            if (text[pos] == 'Z' && pos + 1 == text.size()) {
                pos += 1;
            } else if ((text[pos] == '+' || text[pos] == '-') && pos + 6 == text.size() && text[pos + 3] == ':') {
                const int sign = text[pos] == '+' ? 1 : -1;
                ms -= sign * (num(pos + 1, 2) * 60LL + num(pos + 4, 2)) * 60000LL;
                pos += 6;
            }
        }
    }
    if (pos != text.size()) fail();
    return ms;
}

}  // namespace notehelp
