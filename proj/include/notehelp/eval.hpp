#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "notehelp/ingest.hpp"
#include "notehelp/llm.hpp"
#include "notehelp/reason_tag.hpp"

namespace notehelp {

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;  // gold count
};

struct BinaryMetrics {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    ClassMetrics positive;
    ClassMetrics negative;
    double accuracy = 0.0;

    // Positive-class shorthands.
    double precision() const { return positive.precision; }
    double recall() const { return positive.recall; }
    double f1() const { return positive.f1; }
};

// `true` marks the positive class in both lists.
BinaryMetrics binary_metrics(std::span<const bool> predicted, std::span<const bool> gold);

// Positive class HELPFUL.
BinaryMetrics binary_f1(std::span<const Helpfulness> predicted, std::span<const Helpfulness> gold);

struct PredictedLabels {
    ReasonSet tags;
    std::size_t unknown = 0;  // off-vocabulary names; false positives only
};

PredictedLabels predicted_labels(const PredictionOutput& p);

struct LabelCounts {
    std::size_t tp = 0, fp = 0, fn = 0;
};

struct MultilabelMetrics {
    double microPrecision = 0.0, microRecall = 0.0, microF1 = 0.0;
    double macroPrecision = 0.0, macroRecall = 0.0, macroF1 = 0.0;
    std::array<LabelCounts, kReasonCount> perLabel{};
    std::size_t unknownFp = 0;
    std::size_t labelsWithSupport = 0;
    std::size_t tp = 0, fp = 0, fn = 0;  // summed, including unknownFp in fp
};

/// How gold sets larger than the two reasons a prompt asks for are scored.
/// FullSet counts every missed gold tag as a false negative. CappedGold
/// treats a gold set as satisfied once two of its tags are predicted: an
/// example contributes at most max(0, 2 - hits) false negatives, charged to
/// the missed tags in canonical order.
enum class ReasonScoring : std::uint8_t { FullSet, CappedGold };
inline constexpr std::size_t kCappedGoldSize = 2;

std::string_view to_string(ReasonScoring s);
std::optional<ReasonScoring> reason_scoring_from_string(std::string_view s);

/// Micro metrics from summed counts; macro metrics average over labels with
/// non-zero gold support.
MultilabelMetrics multilabel_prf(std::span<const PredictedLabels> predicted, std::span<const ReasonSet> gold,
                                 ReasonScoring scoring = ReasonScoring::FullSet);

nlohmann::json to_json(const BinaryMetrics& m);
nlohmann::json to_json(const MultilabelMetrics& m);

// ---- evidence sufficiency -------------------------------------------------

enum class Sufficiency : std::uint8_t { EnoughInfo, NotEnoughInfo };

struct SufficiencyExample {
    std::string id;
    std::string claim;
    std::string evidence;
    Sufficiency gold = Sufficiency::EnoughInfo;
};

// JSONL {id?, claim, evidence, label: EI|NEI}.
std::vector<SufficiencyExample> load_sufficiency_examples(const std::filesystem::path& path);

// helpful -> EI, non_helpful -> NEI; positive class NEI.
BinaryMetrics sufficiency_transfer(std::span<const Helpfulness> predicted, std::span<const Sufficiency> gold);

struct SufficiencyReport {
    BinaryMetrics metrics;
    std::size_t failures = 0;  // unparseable or failed calls, scored as wrong
    std::vector<PredictResult> predictions;
};

// Runs the helpfulness predictor on (claim, evidence) pairs, then sufficiency_transfer.
SufficiencyReport sufficiency_eval(std::span<const SufficiencyExample> examples, const PromptTemplate& tmpl,
                                   const DefinitionSet* defs, ChatBackend& backend, const PredictOptions& options = {});

// ---- fact checking --------------------------------------------------------

struct EvidenceItem {
    std::string text;
    std::optional<Helpfulness> helpfulness;
    ReasonSet reasons;
    std::optional<double> score;
};

struct FcExample {
    std::string id;
    std::string claim;
    std::vector<EvidenceItem> evidence;
    FcLabel gold = FcLabel::NotEnoughInfo;
};

// JSONL {id?, claim, evidences: [{text, helpfulness?, reasons?, score?}], label}.
std::vector<FcExample> load_fc_examples(const std::filesystem::path& path);

enum class FcMode : std::uint8_t { Direct, WithHelpfulness };
std::string_view to_string(FcMode m);

// Numbered evidence lines; WithHelpfulness appends each item's annotation.
std::string evidence_text(const FcExample& ex, FcMode mode);

struct FcOutcome {
    std::string id;
    std::optional<FcLabel> predicted;
    std::string reason;
    std::string error;
    bool correct = false;
};

struct FcReport {
    FcMode mode = FcMode::Direct;
    std::size_t total = 0;
    std::size_t correct = 0;
    std::size_t unparsed = 0;
    double accuracy = 0.0;
    // confusion[gold][predicted]; column 4 counts unparseable answers.
    std::array<std::array<std::size_t, 5>, 4> confusion{};
    std::vector<FcOutcome> outcomes;
};

FcReport fact_check_eval(std::span<const FcExample> examples, ChatBackend& backend, FcMode mode,
                         const PredictOptions& options = {});

nlohmann::json to_json(const FcReport& r);

// ---- significance ---------------------------------------------------------

struct SignificanceResult {
    double pValue = 1.0;
    double observedDiff = 0.0;  // accuracy(A) - accuracy(B)
    std::size_t resamples = 0;
    std::uint64_t seed = 0;
};

/// Paired bootstrap over example indices on the accuracy difference.
/// Two-sided p = min(1, 2 * min(#{d* <= 0} + 1, #{d* >= 0} + 1) / (B + 1)).
SignificanceResult significance_test(std::span<const bool> a, std::span<const bool> b, std::size_t resamples = 10000,
                                     std::uint64_t seed = 0);

nlohmann::json to_json(const SignificanceResult& s);

}  // namespace notehelp
