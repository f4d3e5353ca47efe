#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "notehelp/eval.hpp"
#include "notehelp/ingest.hpp"
#include "notehelp/llm.hpp"

namespace notehelp {

// ---- seed definitions -----------------------------------------------------

struct SeedSamples {
    std::map<ReasonTag, std::vector<DatasetExample>> byTag;
    std::vector<std::string> shortages;  // one message per tag with fewer than requested
};

/// Tags are filled rarest first (ties in canonical order) so scarce tags get
/// their candidates before common ones claim them. Each example is sampled
/// for at most one tag.
SeedSamples sample_seed_instances(std::span<const DatasetExample> train, std::size_t perCategory = 40,
                                  std::uint64_t seed = 0);

// Numbered CLAIM/NOTE blocks bound to ${samples}.
std::string format_samples(std::span<const DatasetExample> samples);

struct LlmCallOptions {
    std::string model = "gpt-4o";
    int maxTokens = 1024;
    std::size_t maxInFlight = 4;
};

// One GEN_DEF call per tag, response stored verbatim.
DefinitionSet generate_seed_definitions(const SeedSamples& samples, ChatBackend& backend,
                                        const LlmCallOptions& options = {});

// ---- state evaluation and expansion ---------------------------------------

struct ErrorCase {
    DatasetExample example;
    std::string predicted;  // raw answer, or the failure message
};

struct Evaluation {
    double reward = 0.0;
    std::vector<ErrorCase> errors;
};

struct EvaluateOptions {
    std::size_t minibatchSize = 32;
    std::uint64_t seed = 0;
    TemplateName prompt = TemplateName::SeedDef;
    ReasonScoring scoring = ReasonScoring::FullSet;
    PredictOptions predict;
};

// Indices of the fixed minibatch drawn from `n` examples, ascending.
std::vector<std::size_t> minibatch_indices(std::size_t n, std::size_t size, std::uint64_t seed);

/// Reward = reason micro-F1 on the seeded minibatch. A failed or unparseable
/// answer predicts nothing. Error cases are the examples whose predicted
/// reasons differ from gold.
Evaluation evaluate_definitions(const DefinitionSet& defs, std::span<const DatasetExample> dev, ChatBackend& backend,
                                const EvaluateOptions& options = {});

struct ChildProposal {
    DefinitionSet state;
    std::string feedback;
};

struct Expansion {
    std::vector<ChildProposal> children;
    std::vector<std::string> discarded;  // log entries for malformed refiner output
};

inline constexpr std::size_t kMaxFeedbackCases = 8;

std::string format_error_cases(std::span<const ErrorCase> cases);

/// One feedback call over at most kMaxFeedbackCases error cases, then
/// `width` refiner calls. Refiner output that does not parse into a complete
/// definition set is discarded and logged.
Expansion expand_node(const DefinitionSet& state, std::span<const ErrorCase> errors, ChatBackend& backend,
                      std::size_t width, const LlmCallOptions& options = {});

class StateEvaluator {
public:
    virtual ~StateEvaluator() = default;
    virtual Evaluation evaluate(const DefinitionSet& state) = 0;
};

class StateExpander {
public:
    virtual ~StateExpander() = default;
    virtual Expansion expand(const DefinitionSet& state, std::span<const ErrorCase> errors, std::size_t width) = 0;
};

class LlmEvaluator : public StateEvaluator {
public:
    LlmEvaluator(std::span<const DatasetExample> dev, ChatBackend& backend, EvaluateOptions options)
        : dev_(dev), backend_(backend), options_(std::move(options)) {}
    Evaluation evaluate(const DefinitionSet& state) override {
        return evaluate_definitions(state, dev_, backend_, options_);
    }

private:
    std::span<const DatasetExample> dev_;
    ChatBackend& backend_;
    EvaluateOptions options_;
};

class LlmExpander : public StateExpander {
public:
    LlmExpander(ChatBackend& backend, LlmCallOptions options) : backend_(backend), options_(std::move(options)) {}
    Expansion expand(const DefinitionSet& state, std::span<const ErrorCase> errors, std::size_t width) override {
        return expand_node(state, errors, backend_, width, options_);
    }

private:
    ChatBackend& backend_;
    LlmCallOptions options_;
};

// ---- search ---------------------------------------------------------------

struct MctsConfig {
    std::size_t iterations = 12;
    std::size_t expansionWidth = 3;
    std::size_t maxDepth = 8;
    double explorationC = std::sqrt(2.0);
    std::size_t minibatchSize = 32;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SearchNode {
    std::size_t id = 0;
    std::optional<std::size_t> parent;
    std::vector<std::size_t> children;
    DefinitionSet state;
    std::size_t depth = 0;
    std::string feedback;
    std::size_t visits = 0;
    double totalReward = 0.0;
    std::optional<double> reward;  // the node's own evaluation, cached
    std::vector<ErrorCase> errors;
    bool expanded = false;
    bool terminal = false;

    double mean_reward() const { return visits == 0 ? 0.0 : totalReward / static_cast<double>(visits); }
};

struct SearchTree {
    std::vector<SearchNode> nodes;  // nodes[0] is the root
};

// mean + c * sqrt(ln(parentVisits) / visits); requires visits > 0.
double uct_value(const SearchNode& child, std::size_t parentVisits, double c);

using MctsObserver = std::function<void(const SearchTree& tree, std::size_t iteration)>;

struct MctsResult {
    DefinitionSet best;
    std::size_t bestNode = 0;
    double bestReward = 0.0;
    double seedReward = 0.0;
    std::vector<std::size_t> trajectory;  // root .. bestNode
    SearchTree tree;
    std::vector<nlohmann::json> trace;
};

/// Selection descends from the root taking the first unvisited child, else
/// the child with the largest UCT value (ties: lowest id). A visited,
/// unexpanded node below maxDepth is expanded on the way down; a node with no
/// error cases, or whose expansion yields nothing, is terminal. Simulation
/// evaluates the selected node itself (cached per node) and the reward is
/// added along the path to the root. The result is the evaluated node with
/// the highest reward (ties: shallower, then lower id) and its path.
MctsResult mcts_optimize(const DefinitionSet& seed, StateEvaluator& evaluator, StateExpander& expander,
                         const MctsConfig& config, const MctsObserver& observer = {});

MctsResult mcts_optimize(const DefinitionSet& seed, std::span<const DatasetExample> dev, ChatBackend& backend,
                         const MctsConfig& config, const LlmCallOptions& llm = {});

// Search events followed by one "node" record per tree node.
void write_trace_jsonl(const std::filesystem::path& path, const MctsResult& result);

}  // namespace notehelp
