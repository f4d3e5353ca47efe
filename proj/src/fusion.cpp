#include "notehelp/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "notehelp/error.hpp"
#include "notehelp/fusion_kernels.hpp"
#include "notehelp/rng.hpp"

namespace notehelp {

using nlohmann::json;

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    EmbeddingTable t;
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(path.string() + ":" + std::to_string(lineNo) + ": " + e.what());
        }
        const auto id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
        auto v = j.at("vector").get<std::vector<double>>();
        if (v.empty()) throw Error("embedding '" + id + "' is empty");
        if (t.dim == 0) t.dim = v.size();
        if (v.size() != t.dim) {
            throw Error("embedding '" + id + "' has dimension " + std::to_string(v.size()) + ", expected " +
                        std::to_string(t.dim));
        }
        if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
            throw Error("embedding '" + id + "' has non-finite values");
        }
        if (!t.rows.emplace(id, std::move(v)).second) throw Error("duplicate embedding id '" + id + "'");
    }
    return t;
}

std::vector<std::vector<double>> reason_embeddings(const EmbeddingTable& table) {
    std::vector<std::vector<double>> out;
    for (auto tag : all_reason_tags()) {
        auto it = table.rows.find(wire_name(tag));
        if (it == table.rows.end()) throw Error("no embedding for reason " + std::string(wire_name(tag)));
        out.push_back(it->second);
    }
    return out;
}

FusionModel FusionModel::zeros(std::size_t dim, std::size_t heads) {
    if (dim == 0 || heads == 0 || dim % heads != 0) {
        throw UsageError("fusion: dimension " + std::to_string(dim) + " is not divisible by head count " +
                         std::to_string(heads));
    }
    FusionModel m;
    m.dim = dim;
    m.heads = heads;
    m.wq.assign(dim * dim, 0.0);
    m.wk.assign(dim * dim, 0.0);
    m.wv.assign(dim * dim, 0.0);
    m.wo.assign(dim * dim, 0.0);
    m.helpW.assign(2 * dim, 0.0);
    m.reasonW.assign(2 * dim * kReasonCount, 0.0);
    m.reasonB.assign(kReasonCount, 0.0);
    return m;
}

FusionModel FusionModel::random(std::size_t dim, std::size_t heads, std::uint64_t seed) {
    FusionModel m = zeros(dim, heads);
    Rng rng(seed);
    auto fill = [&](std::vector<double>& w, double fanIn, double fanOut) {
        const double a = std::sqrt(6.0 / (fanIn + fanOut));
        for (auto& x : w) x = rng.uniform(-a, a);
    };
    const auto d = static_cast<double>(dim);
    fill(m.wq, d, d);
    fill(m.wk, d, d);
    fill(m.wv, d, d);
    fill(m.wo, d, d);
    fill(m.helpW, 2 * d, 1);
    fill(m.reasonW, 2 * d, kReasonCount);
    return m;
}

void FusionModel::validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0) {
        throw Error("fusion model: dimension " + std::to_string(dim) + " is not divisible by head count " +
                    std::to_string(heads));
    }
    const FusionModel shape = zeros(dim, heads);
    auto mine = blocks();
    auto ref = shape.blocks();
    for (std::size_t b = 0; b < mine.size(); ++b) {
        if (mine[b].second.size() != ref[b].second.size()) throw Error("fusion model: block " + mine[b].first + " has wrong size");
        for (double x : mine[b].second) {
            if (!std::isfinite(x)) throw Error("fusion model: block " + mine[b].first + " is not finite");
        }
    }
}

std::vector<std::pair<std::string, std::span<double>>> FusionModel::blocks() {
    return {{"wq", wq},         {"wk", wk},
            {"wv", wv},         {"wo", wo},
            {"help_w", helpW},  {"help_b", std::span<double>(&helpB, 1)},
            {"reason_w", reasonW}, {"reason_b", reasonB}};
}

std::vector<std::pair<std::string, std::span<const double>>> FusionModel::blocks() const {
    auto mut = const_cast<FusionModel*>(this)->blocks();
    std::vector<std::pair<std::string, std::span<const double>>> out;
    for (auto& [name, s] : mut) out.emplace_back(name, s);
    return out;
}

json to_json(const FusionModel& m) {
    json j{{"format", "notehelp-fusion-1"}, {"dim", m.dim}, {"heads", m.heads}, {"defs_fingerprint", m.defsFingerprint}};
    json params = json::object();
    for (const auto& [name, s] : m.blocks()) params[name] = std::vector<double>(s.begin(), s.end());
    j["params"] = params;
    return j;
}

FusionModel fusion_model_from_json(const json& j) {
    FusionModel m = FusionModel::zeros(j.at("dim").get<std::size_t>(), j.at("heads").get<std::size_t>());
    m.defsFingerprint = j.value("defs_fingerprint", "");
    const auto& params = j.at("params");
    for (auto& [name, s] : m.blocks()) {
        const auto v = params.at(name).get<std::vector<double>>();
        if (v.size() != s.size()) throw Error("fusion checkpoint: block " + name + " has wrong size");
        std::copy(v.begin(), v.end(), s.begin());
    }
    m.validate();
    return m;
}

std::vector<double> attention_forward(std::span<const double> query, std::span<const std::vector<double>> keys,
                                      std::span<const std::vector<double>> values, const FusionModel& model,
                                      AttentionTrace* trace) {
    const std::size_t d = model.dim, dh = model.head_dim(), n = keys.size();
    if (keys.empty() || keys.size() != values.size()) throw Error("attention: need equal, non-zero key and value counts");
    if (query.size() != d) throw Error("attention: query dimension " + std::to_string(query.size()) + " != " + std::to_string(d));
    for (std::size_t m = 0; m < n; ++m) {
        if (keys[m].size() != d || values[m].size() != d) throw Error("attention: key/value " + std::to_string(m) + " has wrong dimension");
    }
    auto project = [&](std::span<const double> x, const std::vector<double>& w) {
        std::vector<double> y(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) y[j] += x[i] * w[i * d + j];
        }
        return y;
    };
    const auto q = project(query, model.wq);
    std::vector<std::vector<double>> k, v;
    for (std::size_t m = 0; m < n; ++m) {
        k.push_back(project(keys[m], model.wk));
        v.push_back(project(values[m], model.wv));
    }
    if (trace) trace->weights.assign(model.heads, std::vector<double>(n));

    std::vector<double> concat(d, 0.0);
    std::vector<double> s(n);
    for (std::size_t t = 0; t < model.heads; ++t) {
        for (std::size_t m = 0; m < n; ++m) {
            double dot = 0.0;
            for (std::size_t c = t * dh; c < (t + 1) * dh; ++c) dot += q[c] * k[m][c];
            s[m] = dot / std::sqrt(static_cast<double>(dh));
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double total = 0.0;
        for (auto& x : s) {
            x = std::exp(x - mx);
            total += x;
        }
        for (std::size_t m = 0; m < n; ++m) {
            const double a = s[m] / total;
            if (trace) trace->weights[t][m] = a;
            for (std::size_t c = t * dh; c < (t + 1) * dh; ++c) concat[c] += a * v[m][c];
        }
    }
    return project(concat, model.wo);
}

FusionLogits fusion_forward(std::span<const double> note, std::span<const std::vector<double>> reasonEmbs,
                            const FusionModel& model) {
    if (reasonEmbs.size() != kReasonCount) throw Error("fusion: expected 18 reason embeddings");
    const auto fused = attention_forward(note, reasonEmbs, reasonEmbs, model);
    std::vector<double> z(note.begin(), note.end());
    z.insert(z.end(), fused.begin(), fused.end());
    FusionLogits out;
    out.helpful = model.helpB;
    for (std::size_t i = 0; i < z.size(); ++i) out.helpful += model.helpW[i] * z[i];
    for (std::size_t j = 0; j < kReasonCount; ++j) {
        double s = model.reasonB[j];
        for (std::size_t i = 0; i < z.size(); ++i) s += model.reasonW[i * kReasonCount + j] * z[i];
        out.reasons[j] = s;
    }
    return out;
}

double bce_with_logit(double logit, double label) {
    return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

double multitask_loss(const FusionLogits& logits, bool helpful, const ReasonSet& reasons, LossWeights w) {
    double r = 0.0;
    for (std::size_t j = 0; j < kReasonCount; ++j) r += bce_with_logit(logits.reasons[j], reasons.test(j) ? 1.0 : 0.0);
    return w.alpha * bce_with_logit(logits.helpful, helpful ? 1.0 : 0.0) + w.beta * r / static_cast<double>(kReasonCount);
}

void validate_batch(std::span<const FusionExample> batch, std::size_t dim) {
    if (batch.empty()) throw Error("fusion: empty batch");
    for (const auto& ex : batch) {
        if (ex.note.size() != dim) {
            throw Error("fusion: example '" + ex.id + "' has dimension " + std::to_string(ex.note.size()) + ", expected " +
                        std::to_string(dim));
        }
        const auto wrong = polarity_mask(ex.helpful ? Polarity::NotHelpful : Polarity::Helpful);
        if ((ex.reasons & wrong).any()) throw Error("fusion: example '" + ex.id + "' has reasons of the wrong polarity");
    }
}

double loss_and_gradient(const FusionModel& model, std::span<const std::vector<double>> reasonEmbs,
                         std::span<const FusionExample> batch, LossWeights w, FusionModel* grad, bool reference) {
    validate_batch(batch, model.dim);
    if (reasonEmbs.size() != kReasonCount) throw Error("fusion: expected 18 reason embeddings");
    for (const auto& e : reasonEmbs) {
        if (e.size() != model.dim) throw Error("fusion: reason embedding dimension mismatch");
    }
    const double loss = reference ? kernels::reference::fusion_loss_grad(model, reasonEmbs, batch, w, grad)
                                  : kernels::parallel::fusion_loss_grad(model, reasonEmbs, batch, w, grad);
    if (grad) grad->defsFingerprint = model.defsFingerprint;
    return loss;
}

double train_step(FusionModel& model, std::span<const std::vector<double>> reasonEmbs,
                  std::span<const FusionExample> batch, double learningRate, LossWeights w) {
    FusionModel grad;
    const double loss = loss_and_gradient(model, reasonEmbs, batch, w, &grad);
    auto g = std::as_const(grad).blocks();
    for (const auto& [name, s] : g) {
        for (double x : s) {
            if (!std::isfinite(x)) throw Error("fusion: non-finite gradient in block " + name);
        }
    }
    auto p = model.blocks();
    for (std::size_t b = 0; b < p.size(); ++b) {
        for (std::size_t i = 0; i < p[b].second.size(); ++i) p[b].second[i] -= learningRate * g[b].second[i];
    }
    return loss;
}

FusionTrainResult train_fusion(std::span<const FusionExample> batch, std::span<const std::vector<double>> reasonEmbs,
                               const FusionTrainConfig& config) {
    if (batch.empty()) throw Error("fusion: empty training set");
    FusionTrainResult r;
    r.model = FusionModel::random(batch.front().note.size(), config.heads, config.seed);
    for (std::size_t e = 0; e < config.epochs; ++e) {
        r.losses.push_back(train_step(r.model, reasonEmbs, batch, config.learningRate, config.weights));
    }
    return r;
}

std::vector<FusionPrediction> fusion_predict(const FusionModel& model, std::span<const std::vector<double>> reasonEmbs,
                                             std::span<const FusionExample> examples) {
    for (const auto& ex : examples) {
        if (ex.note.size() != model.dim) throw Error("fusion: example '" + ex.id + "' has wrong dimension");
    }
    auto sigmoid = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
    std::vector<FusionPrediction> out(examples.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto l = fusion_forward(examples[i].note, reasonEmbs, model);
        out[i].helpfulProb = sigmoid(l.helpful);
        for (std::size_t j = 0; j < kReasonCount; ++j) out[i].reasonProbs[j] = sigmoid(l.reasons[j]);
    }
    return out;
}

ReasonSet decode_reasons(const FusionPrediction& p, double threshold) {
    const auto mask = polarity_mask(p.helpfulProb >= 0.5 ? Polarity::Helpful : Polarity::NotHelpful);
    ReasonSet s;
    for (std::size_t j = 0; j < kReasonCount; ++j) {
        if (mask.test(j) && p.reasonProbs[j] > threshold) s.set(j);
    }
    return s;
}

std::vector<FusionExample> load_fusion_examples(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    std::vector<FusionExample> out;
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path.string() + ":" + std::to_string(lineNo);
        try {
            const auto j = json::parse(line);
            FusionExample ex;
            ex.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
            ex.note = j.at("vector").get<std::vector<double>>();
            const auto label = j.at("label").get<std::string>();
            if (label == "HELPFUL") {
                ex.helpful = true;
            } else if (label != "NOT_HELPFUL") {
                throw Error("unknown label " + label);
            }
            for (const auto& r : j.value("reasons", json::array())) {
                auto t = tag_from_loose(r.get<std::string>());
                if (!t) throw Error("unknown reason " + r.get<std::string>());
                ex.reasons.set(index_of(*t));
            }
            out.push_back(std::move(ex));
        } catch (const json::exception& e) {
            throw Error(where + ": " + e.what());
        } catch (const Error& e) {
            throw Error(where + ": " + e.what());
        }
    }
    return out;
}

}  // namespace notehelp
