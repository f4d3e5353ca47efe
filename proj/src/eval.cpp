#include "notehelp/eval.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include "notehelp/error.hpp"
#include "notehelp/rng.hpp"

namespace notehelp {

using nlohmann::json;

namespace {

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double f1_of(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

void check_lengths(std::size_t a, std::size_t b) {
    if (a != b) throw Error("length mismatch: " + std::to_string(a) + " predictions vs " + std::to_string(b) + " golds");
}

template <typename F>
void read_jsonl(const std::filesystem::path& path, F&& each) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            each(json::parse(line), lineNo);
        } catch (const std::exception& e) {
            throw Error(path.string() + ":" + std::to_string(lineNo) + ": " + e.what());
        }
    }
}

std::string id_of(const json& j, std::size_t lineNo) {
    if (!j.contains("id")) return std::to_string(lineNo);
    return j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
}

// `true` (non-zero) marks the positive class.
BinaryMetrics from_flags(const std::vector<char>& predicted, const std::vector<char>& gold) {
    check_lengths(predicted.size(), gold.size());
    if (gold.empty()) throw Error("binary metrics need at least one example");
    BinaryMetrics m;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (predicted[i] && gold[i]) ++m.tp;
        else if (predicted[i]) ++m.fp;
        else if (gold[i]) ++m.fn;
        else ++m.tn;
    }
    m.positive.precision = ratio(m.tp, m.tp + m.fp);
    m.positive.recall = ratio(m.tp, m.tp + m.fn);
    m.positive.f1 = f1_of(m.positive.precision, m.positive.recall);
    m.positive.support = m.tp + m.fn;
    m.negative.precision = ratio(m.tn, m.tn + m.fn);
    m.negative.recall = ratio(m.tn, m.tn + m.fp);
    m.negative.f1 = f1_of(m.negative.precision, m.negative.recall);
    m.negative.support = m.tn + m.fp;
    m.accuracy = ratio(m.tp + m.tn, gold.size());
    return m;
}

template <typename T, typename Pred>
std::vector<char> flags(std::span<const T> xs, Pred&& positive) {
    std::vector<char> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(positive(x) ? 1 : 0);
    return out;
}

}  // namespace

BinaryMetrics binary_metrics(std::span<const bool> predicted, std::span<const bool> gold) {
    auto id = [](bool b) { return b; };
    return from_flags(flags(predicted, id), flags(gold, id));
}

BinaryMetrics binary_f1(std::span<const Helpfulness> predicted, std::span<const Helpfulness> gold) {
    auto helpful = [](Helpfulness h) { return h == Helpfulness::Helpful; };
    return from_flags(flags(predicted, helpful), flags(gold, helpful));
}

PredictedLabels predicted_labels(const PredictionOutput& p) { return {p.known_reasons(), p.unknown_count()}; }

std::string_view to_string(ReasonScoring s) { return s == ReasonScoring::FullSet ? "full-set" : "capped-gold"; }

std::optional<ReasonScoring> reason_scoring_from_string(std::string_view s) {
    if (s == "full-set" || s == "full") return ReasonScoring::FullSet;
    if (s == "capped-gold" || s == "capped") return ReasonScoring::CappedGold;
    return std::nullopt;
}

MultilabelMetrics multilabel_prf(std::span<const PredictedLabels> predicted, std::span<const ReasonSet> gold,
                                 ReasonScoring scoring) {
    check_lengths(predicted.size(), gold.size());
    MultilabelMetrics m;
    std::array<std::size_t, kReasonCount> support{};
    for (std::size_t e = 0; e < gold.size(); ++e) {
        const auto& p = predicted[e].tags;
        const auto& g = gold[e];
        const auto hits = (p & g).count();
        std::size_t fnBudget = kReasonCount;
        if (scoring == ReasonScoring::CappedGold) fnBudget = hits >= kCappedGoldSize ? 0 : kCappedGoldSize - hits;
        for (std::size_t j = 0; j < kReasonCount; ++j) {
            if (g.test(j)) ++support[j];
            if (p.test(j) && g.test(j)) {
                ++m.perLabel[j].tp;
            } else if (p.test(j)) {
                ++m.perLabel[j].fp;
            } else if (g.test(j) && fnBudget > 0) {
                ++m.perLabel[j].fn;
                --fnBudget;
            }
        }
        m.unknownFp += predicted[e].unknown;
    }
    for (const auto& c : m.perLabel) {
        m.tp += c.tp;
        m.fp += c.fp;
        m.fn += c.fn;
    }
    m.fp += m.unknownFp;
    m.microPrecision = ratio(m.tp, m.tp + m.fp);
    m.microRecall = ratio(m.tp, m.tp + m.fn);
    m.microF1 = f1_of(m.microPrecision, m.microRecall);

    for (std::size_t j = 0; j < kReasonCount; ++j) {
        if (support[j] == 0) continue;
        const auto& c = m.perLabel[j];
        const double p = ratio(c.tp, c.tp + c.fp);
        const double r = ratio(c.tp, c.tp + c.fn);
        m.macroPrecision += p;
        m.macroRecall += r;
        m.macroF1 += f1_of(p, r);
        ++m.labelsWithSupport;
    }
    if (m.labelsWithSupport > 0) {
        const auto n = static_cast<double>(m.labelsWithSupport);
        m.macroPrecision /= n;
        m.macroRecall /= n;
        m.macroF1 /= n;
    }
    return m;
}

json to_json(const BinaryMetrics& m) {
    auto cls = [](const ClassMetrics& c) {
        return json{{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}};
    };
    return json{{"tp", m.tp},         {"fp", m.fp}, {"fn", m.fn}, {"tn", m.tn}, {"positive", cls(m.positive)},
                {"negative", cls(m.negative)}, {"accuracy", m.accuracy}};
}

json to_json(const MultilabelMetrics& m) {
    json per = json::object();
    for (auto t : all_reason_tags()) {
        const auto& c = m.perLabel[index_of(t)];
        per[std::string(wire_name(t))] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
    }
    return json{{"micro", {{"precision", m.microPrecision}, {"recall", m.microRecall}, {"f1", m.microF1}}},
                {"macro", {{"precision", m.macroPrecision}, {"recall", m.macroRecall}, {"f1", m.macroF1}}},
                {"tp", m.tp},
                {"fp", m.fp},
                {"fn", m.fn},
                {"unknown_fp", m.unknownFp},
                {"labels_with_support", m.labelsWithSupport},
                {"per_label", per}};
}

// ---- sufficiency ----------------------------------------------------------

std::vector<SufficiencyExample> load_sufficiency_examples(const std::filesystem::path& path) {
    std::vector<SufficiencyExample> out;
    read_jsonl(path, [&](const json& j, std::size_t lineNo) {
        SufficiencyExample ex;
        ex.id = id_of(j, lineNo);
        ex.claim = j.at("claim").get<std::string>();
        ex.evidence = j.at("evidence").get<std::string>();
        const auto label = j.at("label").get<std::string>();
        if (label == "EI" || label == "ENOUGH_INFO") {
            ex.gold = Sufficiency::EnoughInfo;
        } else if (label == "NEI" || label == "NOT_ENOUGH_INFO") {
            ex.gold = Sufficiency::NotEnoughInfo;
        } else {
            throw Error("unknown sufficiency label " + label);
        }
        out.push_back(std::move(ex));
    });
    return out;
}

BinaryMetrics sufficiency_transfer(std::span<const Helpfulness> predicted, std::span<const Sufficiency> gold) {
    return from_flags(flags(predicted, [](Helpfulness h) { return h == Helpfulness::NotHelpful; }),
                      flags(gold, [](Sufficiency s) { return s == Sufficiency::NotEnoughInfo; }));
}

SufficiencyReport sufficiency_eval(std::span<const SufficiencyExample> examples, const PromptTemplate& tmpl,
                                   const DefinitionSet* defs, ChatBackend& backend, const PredictOptions& options) {
    std::vector<DatasetExample> asNotes;
    for (const auto& ex : examples) {
        DatasetExample d;
        d.noteId = ex.id;
        d.postText = ex.claim;
        d.noteText = ex.evidence;
        asNotes.push_back(std::move(d));
    }
    SufficiencyReport r;
    r.predictions = predict_batch(asNotes, tmpl, defs, backend, options);
    std::vector<Helpfulness> predicted;
    std::vector<Sufficiency> gold;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        gold.push_back(examples[i].gold);
        if (r.predictions[i].output) {
            predicted.push_back(r.predictions[i].output->helpfulness);
        } else {
            ++r.failures;
            // scored as wrong
            predicted.push_back(examples[i].gold == Sufficiency::NotEnoughInfo ? Helpfulness::Helpful : Helpfulness::NotHelpful);
        }
    }
    r.metrics = sufficiency_transfer(predicted, gold);
    return r;
}

// ---- fact checking --------------------------------------------------------

std::vector<FcExample> load_fc_examples(const std::filesystem::path& path) {
    std::vector<FcExample> out;
    read_jsonl(path, [&](const json& j, std::size_t lineNo) {
        FcExample ex;
        ex.id = id_of(j, lineNo);
        ex.claim = j.at("claim").get<std::string>();
        for (const auto& e : j.at("evidences")) {
            EvidenceItem item;
            item.text = e.at("text").get<std::string>();
            if (e.contains("helpfulness") && !e["helpfulness"].is_null()) {
                const auto h = e["helpfulness"].get<std::string>();
                if (h == "helpful" || h == "HELPFUL") {
                    item.helpfulness = Helpfulness::Helpful;
                } else if (h == "non_helpful" || h == "NOT_HELPFUL" || h == "not_helpful") {
                    item.helpfulness = Helpfulness::NotHelpful;
                } else {
                    throw Error("unknown helpfulness " + h);
                }
            }
            for (const auto& r : e.value("reasons", json::array())) {
                auto t = tag_from_loose(r.get<std::string>());
                if (!t) throw Error("unknown reason " + r.get<std::string>());
                item.reasons.set(index_of(*t));
            }
            if (e.contains("score") && e["score"].is_number()) item.score = e["score"].get<double>();
            ex.evidence.push_back(std::move(item));
        }
        if (ex.evidence.empty()) throw Error("example " + ex.id + " has no evidence");
        auto label = fc_label_from_string(j.at("label").get<std::string>());
        if (!label) throw Error("unknown verdict " + j.at("label").get<std::string>());
        ex.gold = *label;
        out.push_back(std::move(ex));
    });
    return out;
}

std::string_view to_string(FcMode m) { return m == FcMode::Direct ? "DIRECT" : "WITH_HELPFULNESS"; }

std::string evidence_text(const FcExample& ex, FcMode mode) {
    std::string out;
    for (std::size_t i = 0; i < ex.evidence.size(); ++i) {
        const auto& e = ex.evidence[i];
        if (!out.empty()) out += '\n';
        out += std::to_string(i + 1) + ". " + e.text;
        if (mode == FcMode::WithHelpfulness) {
            out += " [Helpfulness: ";
            out += e.helpfulness == Helpfulness::Helpful ? "helpful" : "not helpful";
            if (e.score) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.3f", *e.score);
                out += "; score: ";
                out += buf;
            }
            if (e.reasons.any()) {
                out += "; reasons: ";
                bool first = true;
                for (auto t : to_tags(e.reasons)) {
                    if (!first) out += ", ";
                    out += wire_name(t);
                    first = false;
                }
            }
            out += "]";
        }
    }
    return out;
}

FcReport fact_check_eval(std::span<const FcExample> examples, ChatBackend& backend, FcMode mode,
                         const PredictOptions& options) {
    if (options.maxInFlight < 1) throw UsageError("maxInFlight must be >= 1");
    if (mode == FcMode::WithHelpfulness) {
        for (const auto& ex : examples) {
            for (const auto& e : ex.evidence) {
                if (!e.helpfulness) throw UsageError("example " + ex.id + " lacks helpfulness annotations");
            }
        }
    }
    const auto& tmpl = prompt_template(mode == FcMode::Direct ? TemplateName::FcDirect : TemplateName::FcHelpful);
    const std::string evidenceKey = mode == FcMode::Direct ? "evidence_text" : "evidence_text_with_helpfulness_information";

    FcReport r;
    r.mode = mode;
    r.total = examples.size();
    r.outcomes.resize(examples.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < examples.size(); i = next++) {
            auto& o = r.outcomes[i];
            o.id = examples[i].id;
            try {
                const auto prompt = render_prompt(tmpl, {{"claim", examples[i].claim}, {evidenceKey, evidence_text(examples[i], mode)}});
                const auto v = parse_fc_verdict(backend.complete(user_request(prompt, options.model, options.maxTokens)));
                o.predicted = v.label;
                o.reason = v.reason;
                o.correct = v.label == examples[i].gold;
            } catch (const std::exception& e) {
                o.error = e.what();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const auto workers = std::min<std::size_t>(options.maxInFlight, examples.size());
        for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
        worker();
    }
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& o = r.outcomes[i];
        const auto g = static_cast<std::size_t>(examples[i].gold);
        if (o.predicted) {
            ++r.confusion[g][static_cast<std::size_t>(*o.predicted)];
        } else {
            ++r.confusion[g][4];
            ++r.unparsed;
        }
        r.correct += o.correct ? 1 : 0;
    }
    r.accuracy = ratio(r.correct, r.total);
    return r;
}

json to_json(const FcReport& r) {
    static constexpr std::array<std::string_view, 5> cols = {"SUPPORTS", "REFUTES", "NOT_ENOUGH_INFO", "DISPUTED", "UNPARSED"};
    json confusion = json::object();
    for (std::size_t g = 0; g < 4; ++g) {
        json row = json::object();
        for (std::size_t p = 0; p < 5; ++p) row[std::string(cols[p])] = r.confusion[g][p];
        confusion[std::string(cols[g])] = row;
    }
    json outcomes = json::array();
    for (const auto& o : r.outcomes) {
        json j{{"id", o.id}, {"correct", o.correct}};
        if (o.predicted) {
            j["predicted"] = to_string(*o.predicted);
            j["reason"] = o.reason;
        } else {
            j["error"] = o.error;
        }
        outcomes.push_back(j);
    }
    return json{{"mode", to_string(r.mode)}, {"total", r.total},       {"correct", r.correct}, {"unparsed", r.unparsed},
                {"accuracy", r.accuracy},    {"confusion", confusion}, {"outcomes", outcomes}};
}

// ---- significance ---------------------------------------------------------

SignificanceResult significance_test(std::span<const bool> a, std::span<const bool> b, std::size_t resamples,
                                     std::uint64_t seed) {
    check_lengths(a.size(), b.size());
    if (a.empty()) throw Error("significance test needs at least one example");
    if (resamples == 0) throw UsageError("resamples must be positive");
    const std::size_t n = a.size();
    std::vector<int> diff(n);
    long long observed = 0;
    for (std::size_t i = 0; i < n; ++i) {
        diff[i] = static_cast<int>(a[i]) - static_cast<int>(b[i]);
        observed += diff[i];
    }
    Rng rng(seed);
    std::size_t le = 0, ge = 0;
    for (std::size_t s = 0; s < resamples; ++s) {
        long long sum = 0;
        for (std::size_t i = 0; i < n; ++i) sum += diff[rng.index(n)];
        le += sum <= 0 ? 1 : 0;
        ge += sum >= 0 ? 1 : 0;
    }
    SignificanceResult r;
    r.resamples = resamples;
    r.seed = seed;
    r.observedDiff = static_cast<double>(observed) / static_cast<double>(n);
    const double denom = static_cast<double>(resamples + 1);
    r.pValue = std::min(1.0, 2.0 * std::min(static_cast<double>(le + 1) / denom, static_cast<double>(ge + 1) / denom));
    return r;
}

json to_json(const SignificanceResult& s) {
    return json{{"p_value", s.pValue}, {"observed_diff", s.observedDiff}, {"resamples", s.resamples}, {"seed", s.seed}};
}

}  // namespace notehelp
