#include "notehelp/mf.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "notehelp/error.hpp"
#include "notehelp/mf_kernels.hpp"
#include "notehelp/rng.hpp"

namespace notehelp {

using nlohmann::json;

double RatingValueMap::operator()(HelpfulnessLevel level) const {
    switch (level) {
        case HelpfulnessLevel::Helpful: return helpful;
        case HelpfulnessLevel::SomewhatHelpful: return somewhatHelpful;
        case HelpfulnessLevel::NotHelpful: return notHelpful;
    }
    return notHelpful;
}

std::optional<std::uint32_t> SparseRatingMatrix::note_row(std::string_view id) const {
    auto it = noteIndex.find(id);
    if (it == noteIndex.end()) return std::nullopt;
    return it->second;
}

std::optional<std::uint32_t> SparseRatingMatrix::rater_col(std::string_view id) const {
    auto it = raterIndex.find(id);
    if (it == raterIndex.end()) return std::nullopt;
    return it->second;
}

SparseRatingMatrix make_matrix(std::vector<std::string> noteIds, std::vector<std::string> raterIds,
                               std::vector<MatrixEntry> entries) {
    SparseRatingMatrix m;
    m.noteIds = std::move(noteIds);
    m.raterIds = std::move(raterIds);
    for (std::uint32_t i = 0; i < m.noteIds.size(); ++i) {
        if (!m.noteIndex.emplace(m.noteIds[i], i).second) throw Error("duplicate note id " + m.noteIds[i]);
    }
    for (std::uint32_t u = 0; u < m.raterIds.size(); ++u) {
        if (!m.raterIndex.emplace(m.raterIds[u], u).second) throw Error("duplicate rater id " + m.raterIds[u]);
    }
    std::sort(entries.begin(), entries.end(),
              [](const MatrixEntry& a, const MatrixEntry& b) { return std::tie(a.row, a.col) < std::tie(b.row, b.col); });
    for (std::size_t e = 0; e < entries.size(); ++e) {
        if (entries[e].row >= m.rows() || entries[e].col >= m.cols()) throw Error("matrix entry index out of range");
        if (!std::isfinite(entries[e].value)) throw Error("matrix entry value is not finite");
        if (e > 0 && entries[e].row == entries[e - 1].row && entries[e].col == entries[e - 1].col) {
            throw Error("duplicate matrix cell (" + m.noteIds[entries[e].row] + ", " + m.raterIds[entries[e].col] + ")");
        }
    }
    m.entries = std::move(entries);
    return m;
}

namespace {

using ValueFn = std::function<double(const RawRating&)>;

SparseRatingMatrix build_filtered(std::span<const RawRating> ratings, std::size_t minRater, std::size_t minNote,
                                  const ValueFn& value) {
    std::vector<bool> alive(ratings.size(), true);
    while (true) {
        std::map<std::string_view, std::size_t> perNote, perRater;
        for (std::size_t r = 0; r < ratings.size(); ++r) {
            if (!alive[r]) continue;
            ++perNote[ratings[r].noteId];
            ++perRater[ratings[r].raterId];
        }
        bool changed = false;
        for (std::size_t r = 0; r < ratings.size(); ++r) {
            if (alive[r] && (perNote[ratings[r].noteId] < minNote || perRater[ratings[r].raterId] < minRater)) {
                alive[r] = false;
                changed = true;
            }
        }
        if (!changed) break;
    }

    std::set<std::string> notes, raters;
    for (std::size_t r = 0; r < ratings.size(); ++r) {
        if (!alive[r]) continue;
        notes.insert(ratings[r].noteId);
        raters.insert(ratings[r].raterId);
    }
    if (notes.empty()) throw Error("rating matrix is empty after filtering");
    std::vector<std::string> noteIds(notes.begin(), notes.end());
    std::vector<std::string> raterIds(raters.begin(), raters.end());
    std::map<std::string_view, std::uint32_t> ni, ri;
    for (std::uint32_t i = 0; i < noteIds.size(); ++i) ni[noteIds[i]] = i;
    for (std::uint32_t u = 0; u < raterIds.size(); ++u) ri[raterIds[u]] = u;
    std::vector<MatrixEntry> entries;
    for (std::size_t r = 0; r < ratings.size(); ++r) {
        if (alive[r]) entries.push_back({ni[ratings[r].noteId], ri[ratings[r].raterId], value(ratings[r])});
    }
    return make_matrix(std::move(noteIds), std::move(raterIds), std::move(entries));
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

double param_change(const MfParams& a, const MfParams& b) {
    return std::max({std::abs(a.mu - b.mu), max_abs_diff(a.noteIntercept, b.noteIntercept),
                     max_abs_diff(a.raterIntercept, b.raterIntercept), max_abs_diff(a.noteFactor, b.noteFactor),
                     max_abs_diff(a.raterFactor, b.raterFactor)});
}

double regularizer(const MfParams& p, const MfConfig& c) {
    double ri = p.mu * p.mu, rf = 0.0;
    for (double v : p.noteIntercept) ri += v * v;
    for (double v : p.raterIntercept) ri += v * v;
    for (double v : p.noteFactor) rf += v * v;
    for (double v : p.raterFactor) rf += v * v;
    return c.lambdaIntercept * ri + c.lambdaFactor * rf;
}

void update_mu(const SparseRatingMatrix& m, MfParams& p, const MfConfig& c) {
    double s = 0.0;
    for (const auto& e : m.entries) {
        double f = 0.0;
        for (std::size_t j = 0; j < p.k; ++j) f += p.noteFactor[e.row * p.k + j] * p.raterFactor[e.col * p.k + j];
        s += e.value - p.noteIntercept[e.row] - p.raterIntercept[e.col] - f;
    }
    const double denom = static_cast<double>(m.entries.size()) + c.lambdaIntercept;
    p.mu = denom > 0.0 ? s / denom : 0.0;
}

}  // namespace

SparseRatingMatrix build_matrix(std::span<const RawRating> ratings, std::size_t minRaterRatings,
                                std::size_t minNoteRatings, const RatingValueMap& values) {
    return build_filtered(ratings, minRaterRatings, minNoteRatings,
                          [&](const RawRating& r) { return values(r.level); });
}

void MfConfig::validate() const {
    if (k < 1) throw UsageError("MfConfig: k must be >= 1");
    if (!(lambdaIntercept >= 0.0) || !(lambdaFactor >= 0.0)) throw UsageError("MfConfig: regularizers must be >= 0");
    if (!(convergenceTol > 0.0)) throw UsageError("MfConfig: convergenceTol must be > 0");
    if (optimizer == MfOptimizer::GradientDescent && !(learningRate > 0.0)) {
        throw UsageError("MfConfig: learningRate must be > 0 for gradient descent");
    }
}

json to_json(const MfConfig& c) {
    return json{{"k", c.k},
                {"lambda_intercept", c.lambdaIntercept},
                {"lambda_factor", c.lambdaFactor},
                {"learning_rate", c.learningRate},
                {"max_epochs", c.maxEpochs},
                {"convergence_tol", c.convergenceTol},
                {"seed", c.seed},
                {"optimizer", c.optimizer == MfOptimizer::AlternatingLeastSquares ? "als" : "gd"}};
}

MfConfig mf_config_from_json(const json& j, MfConfig c) {
    c.k = j.value("k", c.k);
    c.lambdaIntercept = j.value("lambda_intercept", c.lambdaIntercept);
    c.lambdaFactor = j.value("lambda_factor", c.lambdaFactor);
    c.learningRate = j.value("learning_rate", c.learningRate);
    c.maxEpochs = j.value("max_epochs", c.maxEpochs);
    c.convergenceTol = j.value("convergence_tol", c.convergenceTol);
    c.seed = j.value("seed", c.seed);
    const auto opt = j.value("optimizer", std::string(c.optimizer == MfOptimizer::GradientDescent ? "gd" : "als"));
    if (opt == "als") c.optimizer = MfOptimizer::AlternatingLeastSquares;
    else if (opt == "gd") c.optimizer = MfOptimizer::GradientDescent;
    else throw UsageError("MfConfig: unknown optimizer '" + opt + "'");
    c.validate();
    return c;
}

MfParams init_params(const SparseRatingMatrix& m, const MfConfig& config) {
    MfParams p;
    p.k = config.k;
    p.config = config;
    p.noteIds = m.noteIds;
    p.raterIds = m.raterIds;
    p.noteIntercept.assign(m.rows(), 0.0);
    p.raterIntercept.assign(m.cols(), 0.0);
    Rng rng(config.seed);
    p.noteFactor.resize(m.rows() * p.k);
    p.raterFactor.resize(m.cols() * p.k);
    for (auto& v : p.noteFactor) v = rng.uniform(-0.01, 0.01);
    for (auto& v : p.raterFactor) v = rng.uniform(-0.01, 0.01);
    return p;
}

double mf_objective(const SparseRatingMatrix& m, const MfParams& p, const MfConfig& config) {
    const auto idx = kernels::RatingIndex::build(m);
    return kernels::parallel::squared_error(idx, p) + regularizer(p, config);
}

MfParams fit_mf(const SparseRatingMatrix& m, const MfConfig& config, const MfParams* warmStart) {
    config.validate();
    if (m.entries.empty()) throw Error("fit_mf: rating matrix is empty");

    MfParams p;
    if (warmStart) {
        if (warmStart->noteIds != m.noteIds || warmStart->raterIds != m.raterIds || warmStart->k != config.k) {
            throw Error("fit_mf: warm start does not match the matrix index or factor dimension");
        }
        p = *warmStart;
        p.config = config;
        p.epochLosses.clear();
    } else {
        p = init_params(m, config);
    }

    const auto idx = kernels::RatingIndex::build(m);
    const bool ref = config.referenceKernels;
    auto loss = [&](const MfParams& q) {
        return (ref ? kernels::reference::squared_error(m, q) : kernels::parallel::squared_error(idx, q)) +
               regularizer(q, config);
    };

    const double initial = loss(p);
    p.epochLosses.push_back(initial);
    kernels::MfGradient g;
    for (std::size_t epoch = 0; epoch < config.maxEpochs; ++epoch) {
        const MfParams before = p;
        if (config.optimizer == MfOptimizer::AlternatingLeastSquares) {
            if (ref) {
                kernels::reference::solve_note_blocks(m, p, config);
                kernels::reference::solve_rater_blocks(m, p, config);
            } else {
                kernels::parallel::solve_note_blocks(idx, p, config);
                kernels::parallel::solve_rater_blocks(idx, p, config);
            }
            update_mu(m, p, config);
        } else {
            if (ref) kernels::reference::gradient(m, p, config, g);
            else kernels::parallel::gradient(idx, p, config, g);
            const double lr = config.learningRate;
            p.mu -= lr * g.mu;
            for (std::size_t i = 0; i < p.noteIntercept.size(); ++i) p.noteIntercept[i] -= lr * g.noteIntercept[i];
            for (std::size_t u = 0; u < p.raterIntercept.size(); ++u) p.raterIntercept[u] -= lr * g.raterIntercept[u];
            for (std::size_t i = 0; i < p.noteFactor.size(); ++i) p.noteFactor[i] -= lr * g.noteFactor[i];
            for (std::size_t i = 0; i < p.raterFactor.size(); ++i) p.raterFactor[i] -= lr * g.raterFactor[i];
        }
        const double current = loss(p);
        // Exact block updates cannot raise the objective; a rise is round-off at the optimum.
        if (config.optimizer == MfOptimizer::AlternatingLeastSquares && current > p.epochLosses.back()) {
            auto losses = std::move(p.epochLosses);
            p = before;
            p.epochLosses = std::move(losses);
            break;
        }
        p.epochLosses.push_back(current);
        if (!std::isfinite(current) || current > 10.0 * initial + 1e-12) {
            std::ostringstream msg;
            msg << "fit_mf diverged at epoch " << epoch + 1 << ": loss " << current << " vs initial " << initial
                << " (learning rate " << config.learningRate << ")";
            throw Error(msg.str());
        }
        if (param_change(before, p) < config.convergenceTol) break;
    }
    return p;
}

double predict_rating(const MfParams& p, std::size_t noteIdx, std::size_t raterIdx) {
    if (noteIdx >= p.noteIntercept.size() || raterIdx >= p.raterIntercept.size()) {
        throw Error("predict_rating: index out of range");
    }
    double f = 0.0;
    for (std::size_t j = 0; j < p.k; ++j) f += p.noteFactor[noteIdx * p.k + j] * p.raterFactor[raterIdx * p.k + j];
    return p.mu + p.noteIntercept[noteIdx] + p.raterIntercept[raterIdx] + f;
}

ConfidenceBounds confidence_bounds(const SparseRatingMatrix& m, const MfParams& p, const MfConfig& config,
                                   int nPseudo) {
    if (p.noteIntercept.size() != m.rows() || p.raterIntercept.size() != m.cols()) {
        throw Error("confidence_bounds: parameters do not match the matrix");
    }
    ConfidenceBounds out;
    if (config.referenceKernels) {
        kernels::reference::pseudo_bounds(m, p, config, nPseudo, out.notes);
    } else {
        kernels::parallel::pseudo_bounds(kernels::RatingIndex::build(m), p, config, nPseudo, out.notes);
    }
    return out;
}

RaterHelpfulness rater_helpfulness(std::span<const RawRating> ratings,
                                   const std::map<std::string, Status, std::less<>>& statuses, double retention) {
    std::map<std::string, std::pair<std::size_t, std::size_t>, std::less<>> tally;  // agree, total
    for (const auto& r : ratings) {
        auto it = statuses.find(r.noteId);
        if (it == statuses.end() || it->second == Status::NeedMoreRatings) continue;
        if (r.level == HelpfulnessLevel::SomewhatHelpful) continue;
        auto& [agree, total] = tally[r.raterId];
        ++total;
        const bool helpfulStatus = it->second == Status::CurrentlyRatedHelpful;
        if ((r.level == HelpfulnessLevel::Helpful) == helpfulStatus) ++agree;
    }
    RaterHelpfulness out;
    out.retention = retention;
    for (const auto& [rater, counts] : tally) {
        const double score = static_cast<double>(counts.first) / static_cast<double>(counts.second);
        out.scores.emplace(rater, score);
        if (score < retention) out.lowHelpfulness.insert(rater);
    }
    return out;
}

ReasonSet canonical_tags(const RawRating& r) {
    ReasonSet s;
    for (const auto& raw : r.tagFlags) {
        auto m = classify_raw_tag(raw);
        if (m && m->kind == RawTagKind::Canonical) s.set(index_of(*m->tag));
    }
    return s;
}

MfParams tag_consensus_fit(std::span<const RawRating> ratings, const ReasonSet& tags, const MfConfig& config) {
    bool any = false;
    for (const auto& r : ratings) {
        if ((canonical_tags(r) & tags).any()) {
            any = true;
            break;
        }
    }
    if (!any) throw Error("tag_consensus_fit: no rating carries the requested tag(s)");
    const auto m = build_filtered(ratings, 1, 1, [&](const RawRating& r) {
        return (canonical_tags(r) & tags).any() ? 1.0 : 0.0;
    });
    return fit_mf(m, config);
}

MfParams tag_consensus_fit(std::span<const RawRating> ratings, ReasonTag tag, const MfConfig& config) {
    ReasonSet s;
    s.set(index_of(tag));
    return tag_consensus_fit(ratings, s, config);
}

namespace {

json keyed(const std::vector<std::string>& ids, const std::vector<double>& v, std::size_t stride, bool vectors) {
    json out = json::object();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!vectors) {
            out[ids[i]] = v[i];
        } else {
            out[ids[i]] = std::vector<double>(v.begin() + i * stride, v.begin() + (i + 1) * stride);
        }
    }
    return out;
}

}  // namespace

json to_json(const MfParams& p) {
    return json{{"mu", p.mu},
                {"k", p.k},
                {"note_ids", p.noteIds},
                {"rater_ids", p.raterIds},
                {"note_intercepts", keyed(p.noteIds, p.noteIntercept, 1, false)},
                {"rater_intercepts", keyed(p.raterIds, p.raterIntercept, 1, false)},
                {"note_factors", keyed(p.noteIds, p.noteFactor, p.k, true)},
                {"rater_factors", keyed(p.raterIds, p.raterFactor, p.k, true)},
                {"epoch_losses", p.epochLosses},
                {"config", to_json(p.config)},
                {"seed", p.config.seed}};
}

MfParams mf_params_from_json(const json& j) {
    MfParams p;
    p.mu = j.at("mu").get<double>();
    p.k = j.at("k").get<std::size_t>();
    p.config = mf_config_from_json(j.value("config", json::object()));
    p.noteIds = j.at("note_ids").get<std::vector<std::string>>();
    p.raterIds = j.at("rater_ids").get<std::vector<std::string>>();
    for (const auto& id : p.noteIds) {
        p.noteIntercept.push_back(j.at("note_intercepts").at(id).get<double>());
        auto f = j.at("note_factors").at(id).get<std::vector<double>>();
        if (f.size() != p.k) throw Error("note factor dimension mismatch for " + id);
        p.noteFactor.insert(p.noteFactor.end(), f.begin(), f.end());
    }
    for (const auto& id : p.raterIds) {
        p.raterIntercept.push_back(j.at("rater_intercepts").at(id).get<double>());
        auto f = j.at("rater_factors").at(id).get<std::vector<double>>();
        if (f.size() != p.k) throw Error("rater factor dimension mismatch for " + id);
        p.raterFactor.insert(p.raterFactor.end(), f.begin(), f.end());
    }
    p.epochLosses = j.value("epoch_losses", std::vector<double>{});
    return p;
}

}  // namespace notehelp
