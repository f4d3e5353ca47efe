#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "notehelp/reason_tag.hpp"

namespace notehelp {

struct EmbeddingTable {
    std::size_t dim = 0;
    std::map<std::string, std::vector<double>, std::less<>> rows;
};

// JSONL rows of {"id": ..., "vector": [...]}. Ragged dimensions, duplicate ids
// and non-finite values are errors naming the offending id.
EmbeddingTable load_embeddings(const std::filesystem::path& path);

// The 18 reason embeddings in canonical tag order, looked up by wire name.
std::vector<std::vector<double>> reason_embeddings(const EmbeddingTable& table);

/// Attention fusion model. Projections use the row-vector convention
/// y = x W with W stored row-major (d x d); head t owns columns
/// [t*d/h, (t+1)*d/h) of Wq, Wk and Wv. The two classifier heads read the
/// concatenation [note ‖ fused] of length 2d.
struct FusionModel {
    std::size_t dim = 0;
    std::size_t heads = 1;
    std::vector<double> wq, wk, wv, wo;  // d x d
    std::vector<double> helpW;           // 2d
    double helpB = 0.0;
    std::vector<double> reasonW;         // 2d x 18
    std::vector<double> reasonB;         // 18
    std::string defsFingerprint;

    static FusionModel zeros(std::size_t dim, std::size_t heads);
    // Projection entries ~ U(-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases zero.
    static FusionModel random(std::size_t dim, std::size_t heads, std::uint64_t seed);

    std::size_t head_dim() const { return dim / heads; }
    void validate() const;

    // Every parameter block by name, in a fixed order.
    std::vector<std::pair<std::string, std::span<double>>> blocks();
    std::vector<std::pair<std::string, std::span<const double>>> blocks() const;
};

nlohmann::json to_json(const FusionModel& m);
FusionModel fusion_model_from_json(const nlohmann::json& j);

struct AttentionTrace {
    std::vector<std::vector<double>> weights;  // [head][key]
};

/// Per head: softmax(q·kᵀ/sqrt(d/h)) over the projected keys, weighted sum
/// of projected values; heads are concatenated and multiplied by Wo.
std::vector<double> attention_forward(std::span<const double> query, std::span<const std::vector<double>> keys,
                                      std::span<const std::vector<double>> values, const FusionModel& model,
                                      AttentionTrace* trace = nullptr);

struct FusionLogits {
    double helpful = 0.0;
    std::array<double, kReasonCount> reasons{};
};

// Reason embeddings serve as both keys and values.
FusionLogits fusion_forward(std::span<const double> note, std::span<const std::vector<double>> reasonEmbs,
                            const FusionModel& model);

struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
};

// max(x, 0) - x*y + log1p(exp(-|x|))
double bce_with_logit(double logit, double label);

double multitask_loss(const FusionLogits& logits, bool helpful, const ReasonSet& reasons, LossWeights w = {});

struct FusionExample {
    std::string id;
    std::vector<double> note;
    bool helpful = false;
    ReasonSet reasons;
};

// Checks dimensions and that reasons match the label polarity.
void validate_batch(std::span<const FusionExample> batch, std::size_t dim);

/// Mean multitask loss over the batch and, when `grad` is given, its
/// gradient with respect to every parameter (same layout as the model).
double loss_and_gradient(const FusionModel& model, std::span<const std::vector<double>> reasonEmbs,
                         std::span<const FusionExample> batch, LossWeights w, FusionModel* grad,
                         bool reference = false);

// One full-batch gradient-descent step; returns the mean loss before the step.
double train_step(FusionModel& model, std::span<const std::vector<double>> reasonEmbs,
                  std::span<const FusionExample> batch, double learningRate, LossWeights w = {});

struct FusionTrainConfig {
    std::size_t epochs = 200;
    double learningRate = 0.1;
    LossWeights weights;
    std::size_t heads = 4;
    std::uint64_t seed = 0;
};

struct FusionTrainResult {
    FusionModel model;
    std::vector<double> losses;  // one per step, before the update
};

FusionTrainResult train_fusion(std::span<const FusionExample> batch, std::span<const std::vector<double>> reasonEmbs,
                               const FusionTrainConfig& config);

struct FusionPrediction {
    double helpfulProb = 0.0;
    std::array<double, kReasonCount> reasonProbs{};
};

// Inference over many examples; runs in parallel against the immutable model.
std::vector<FusionPrediction> fusion_predict(const FusionModel& model, std::span<const std::vector<double>> reasonEmbs,
                                             std::span<const FusionExample> examples);

// Reasons above `threshold`, restricted to the polarity of the predicted label.
ReasonSet decode_reasons(const FusionPrediction& p, double threshold = 0.5);

// JSONL of {"id", "vector", "label": "HELPFUL"|"NOT_HELPFUL", "reasons": [wire names]}.
std::vector<FusionExample> load_fusion_examples(const std::filesystem::path& path);

}  // namespace notehelp
