#pragma once

// Independent reference computations used by the unit and acceptance tests.
// None of these call the code they check.

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "notehelp/apo.hpp"
#include "notehelp/eval.hpp"
#include "notehelp/fusion.hpp"
#include "notehelp/mf.hpp"
#include "notehelp/status.hpp"

namespace notehelp::testing {

// Intercept-only ridge fit: design [1, e_note, e_rater] per entry, every
// coefficient penalized by `lambda`. Returns (mu, note intercepts, rater intercepts).
Eigen::VectorXd ridge_intercepts(const SparseRatingMatrix& m, double lambda);

// The status rules written out as a truth table over the four conditions.
Status status_oracle(double score, double factor, double ucb, std::size_t count);

// Dense matrix attention: softmax(QK^T / sqrt(dh)) V per head, then Wo.
std::vector<double> attention_oracle(std::span<const double> query, std::span<const std::vector<double>> keys,
                                     std::span<const std::vector<double>> values, const FusionModel& model);

struct CountingPrf {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

CountingPrf prf_from_counts(double tp, double fp, double fn);

// Per-class counts by scanning pairs; `positive` picks the class.
CountingPrf binary_oracle(const std::vector<bool>& predicted, const std::vector<bool>& gold, bool positive);

struct MultilabelOracle {
    CountingPrf micro;
    CountingPrf macro;
};

MultilabelOracle multilabel_oracle(std::span<const PredictedLabels> predicted, std::span<const ReasonSet> gold,
                                   ReasonScoring scoring);

// Multitask loss recomputed in 50-digit floating point.
double multitask_loss_oracle(const FusionLogits& logits, bool helpful, const ReasonSet& reasons, LossWeights w);

struct GradientCheck {
    double maxRelError = 0.0;
    std::string worstBlock;
    std::size_t checked = 0;
};

// Central differences with step `eps` on every parameter, compared with the
// analytic gradient. Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradientCheck check_gradient(const FusionModel& model, std::span<const std::vector<double>> reasonEmbs,
                             std::span<const FusionExample> batch, LossWeights w, double eps = 1e-4,
                             bool reference = false);

// Two separable Gaussian clusters of `n` points in `dim` dimensions.
std::vector<FusionExample> separable_batch(std::size_t n, std::size_t dim, std::uint64_t seed);
std::vector<std::vector<double>> random_reason_embeddings(std::size_t dim, std::uint64_t seed);


// ---- mock definition search -----------------------------------------------

// A fixed tree of definition states with known rewards. Node i's state
// carries "mock i" as its helpfulClear definition.
struct MockTree {
    struct Node {
        double reward = 0.0;
        std::size_t depth = 0;
        std::vector<std::size_t> children;
    };
    std::vector<Node> nodes;

    DefinitionSet state(std::size_t i) const;
    std::size_t id_of(const DefinitionSet& s) const;
    // Best reward by brute force over every node (ties: shallower, then lower id).
    std::size_t best() const;
};

// Depth <= maxDepth, 1..maxBranching children per internal node, rewards in [0, 1].
MockTree random_mock_tree(std::size_t maxDepth, std::size_t maxBranching, std::uint64_t seed);

class MockTreeSearch : public StateEvaluator, public StateExpander {
public:
    explicit MockTreeSearch(const MockTree& tree) : tree_(tree) {}
    Evaluation evaluate(const DefinitionSet& state) override;
    Expansion expand(const DefinitionSet& state, std::span<const ErrorCase> errors, std::size_t width) override;
    std::size_t evaluations = 0;
    std::size_t expansions = 0;

private:
    const MockTree& tree_;
};

}  // namespace notehelp::testing
