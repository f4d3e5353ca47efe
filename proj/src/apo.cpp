#include "notehelp/apo.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <thread>

#include "notehelp/error.hpp"
#include "notehelp/rng.hpp"

namespace notehelp {

using nlohmann::json;

namespace {

// Runs fn(0..n-1) with at most `limit` calls in flight.
template <typename F>
void bounded_for(std::size_t n, std::size_t limit, F&& fn) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
    };
    std::vector<std::jthread> pool;
    const std::size_t workers = std::min(std::max<std::size_t>(limit, 1), n);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
}

std::string reasons_text(const ReasonSet& s) {
    std::string out;
    for (auto t : to_tags(s)) {
        if (!out.empty()) out += ';';
        out += wire_name(t);
    }
    return out;
}

}  // namespace

SeedSamples sample_seed_instances(std::span<const DatasetExample> train, std::size_t perCategory, std::uint64_t seed) {
    std::array<std::size_t, kReasonCount> counts{};
    for (const auto& ex : train) {
        for (std::size_t j = 0; j < kReasonCount; ++j) counts[j] += ex.reasons.test(j) ? 1 : 0;
    }
    std::vector<ReasonTag> order(all_reason_tags().begin(), all_reason_tags().end());
    std::stable_sort(order.begin(), order.end(),
                     [&](ReasonTag a, ReasonTag b) { return counts[index_of(a)] < counts[index_of(b)]; });

    SeedSamples out;
    std::vector<bool> used(train.size(), false);
    for (auto tag : order) {
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < train.size(); ++i) {
            if (!used[i] && train[i].reasons.test(index_of(tag))) candidates.push_back(i);
        }
        Rng rng(mix_seed(seed, index_of(tag)));
        rng.shuffle(candidates);
        if (candidates.size() > perCategory) candidates.resize(perCategory);
        std::sort(candidates.begin(), candidates.end());
        if (candidates.size() < perCategory) {
            out.shortages.push_back(std::string(wire_name(tag)) + ": " + std::to_string(candidates.size()) + " of " +
                                    std::to_string(perCategory) + " available");
        }
        auto& bucket = out.byTag[tag];
        for (auto i : candidates) {
            used[i] = true;
            bucket.push_back(train[i]);
        }
    }
    return out;
}

std::string format_samples(std::span<const DatasetExample> samples) {
    std::string out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (i > 0) out += "\n\n";
        out += "Sample " + std::to_string(i + 1) + ":\nCLAIM: " + samples[i].postText + "\nNOTE: " + samples[i].noteText;
    }
    return out;
}

DefinitionSet generate_seed_definitions(const SeedSamples& samples, ChatBackend& backend, const LlmCallOptions& options) {
    for (auto tag : all_reason_tags()) {
        auto it = samples.byTag.find(tag);
        if (it == samples.byTag.end() || it->second.empty()) {
            throw Error("no seed samples for " + std::string(wire_name(tag)));
        }
    }
    const auto& tmpl = prompt_template(TemplateName::GenDef);
    DefinitionSet defs;
    std::array<std::string, kReasonCount> failures;
    bounded_for(kReasonCount, options.maxInFlight, [&](std::size_t j) {
        const auto tag = tag_at(j);
        try {
            const auto prompt = render_prompt(
                tmpl, {{"helpful_label", polarity_of(tag) == Polarity::Helpful ? "helpful" : "not helpful"},
                       {"samples", format_samples(samples.byTag.at(tag))},
                       {"reason_label", std::string(wire_name(tag))}});
            defs[tag] = backend.complete(user_request(prompt, options.model, options.maxTokens));
            if (defs[tag].find_first_not_of(" \t\r\n") == std::string::npos) failures[j] = "empty response";
        } catch (const std::exception& e) {
            failures[j] = e.what();
        }
    });
    for (auto tag : all_reason_tags()) {
        if (!failures[index_of(tag)].empty()) {
            throw Error("seed definition for " + std::string(wire_name(tag)) + " failed: " + failures[index_of(tag)]);
        }
    }
    return defs;
}

std::vector<std::size_t> minibatch_indices(std::size_t n, std::size_t size, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (size >= n) return idx;
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(size);
    std::sort(idx.begin(), idx.end());
    return idx;
}

Evaluation evaluate_definitions(const DefinitionSet& defs, std::span<const DatasetExample> dev, ChatBackend& backend,
                                const EvaluateOptions& options) {
    if (dev.empty()) throw Error("evaluate_definitions: empty dev set");
    defs.validate();
    std::vector<DatasetExample> batch;
    for (auto i : minibatch_indices(dev.size(), options.minibatchSize, options.seed)) batch.push_back(dev[i]);

    const auto results = predict_batch(batch, prompt_template(options.prompt), &defs, backend, options.predict);
    std::vector<PredictedLabels> predicted;
    std::vector<ReasonSet> gold;
    Evaluation ev;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        gold.push_back(batch[i].reasons);
        const auto& r = results[i];
        PredictedLabels p = r.output ? predicted_labels(*r.output) : PredictedLabels{};
        if (!r.output || p.unknown > 0 || p.tags != batch[i].reasons) {
            ev.errors.push_back({batch[i], r.output ? r.output->raw : "error: " + r.error});
        }
        predicted.push_back(p);
    }
    ev.reward = multilabel_prf(predicted, gold, options.scoring).microF1;
    return ev;
}

std::string format_error_cases(std::span<const ErrorCase> cases) {
    std::string out;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& ex = cases[i].example;
        if (i > 0) out += "\n\n";
        out += "Case " + std::to_string(i + 1) + ":\nCLAIM: " + ex.postText + "\nNOTE: " + ex.noteText +
               "\nGold: " + (ex.label == Helpfulness::Helpful ? "helpful" : "non_helpful") + "; reasons: " +
               reasons_text(ex.reasons) + "\nPredicted: " + cases[i].predicted;
    }
    return out;
}

Expansion expand_node(const DefinitionSet& state, std::span<const ErrorCase> errors, ChatBackend& backend,
                      std::size_t width, const LlmCallOptions& options) {
    Expansion out;
    if (errors.empty() || width == 0) return out;
    const auto defsText = format_definitions(state);
    const auto shown = errors.subspan(0, std::min(errors.size(), kMaxFeedbackCases));
    const auto feedback = backend.complete(user_request(
        render_prompt(prompt_template(TemplateName::Feedback), {{"reason definitions", defsText}, {"error_cases", format_error_cases(shown)}}),
        options.model, options.maxTokens));

    std::vector<std::optional<DefinitionSet>> children(width);
    std::vector<std::string> problems(width);
    std::vector<std::exception_ptr> failures(width);
    bounded_for(width, options.maxInFlight, [&](std::size_t v) {
        const auto prompt = render_prompt(prompt_template(TemplateName::Refine),
                                          {{"reason definitions", defsText},
                                           {"feedback", feedback},
                                           {"variant", std::to_string(v + 1) + " of " + std::to_string(width)}});
        std::string raw;
        try {
            raw = backend.complete(user_request(prompt, options.model, options.maxTokens * 4));
        } catch (...) {
            failures[v] = std::current_exception();
            return;
        }
        try {
            const auto obj = find_json_object(raw);
            if (!obj) throw Error("no JSON object in refiner output");
            children[v] = definitions_from_json(json::parse(*obj));
        } catch (const std::exception& e) {
            problems[v] = e.what();
        }
    });
    for (const auto& f : failures) {
        if (f) std::rethrow_exception(f);
    }
    for (std::size_t v = 0; v < width; ++v) {
        if (children[v]) {
            out.children.push_back({std::move(*children[v]), feedback});
        } else {
            out.discarded.push_back("refinement " + std::to_string(v + 1) + " discarded: " + problems[v]);
        }
    }
    return out;
}

void MctsConfig::validate() const {
    if (iterations == 0 || expansionWidth == 0 || maxDepth == 0 || minibatchSize == 0) {
        throw UsageError("MCTS iterations, width, max depth and minibatch size must be positive");
    }
    if (!(explorationC >= 0.0)) throw UsageError("MCTS exploration constant must be >= 0");
}

double uct_value(const SearchNode& child, std::size_t parentVisits, double c) {
    return child.mean_reward() +
           c * std::sqrt(std::log(static_cast<double>(parentVisits)) / static_cast<double>(child.visits));
}

MctsResult mcts_optimize(const DefinitionSet& seed, StateEvaluator& evaluator, StateExpander& expander,
                         const MctsConfig& config, const MctsObserver& observer) {
    config.validate();
    seed.validate();
    MctsResult r;
    auto& nodes = r.tree.nodes;
    nodes.emplace_back();
    nodes[0].state = seed;

    for (std::size_t it = 1; it <= config.iterations; ++it) {
        std::vector<std::size_t> path{0};
        std::size_t cur = 0;
        while (true) {
            if (nodes[cur].visits == 0) break;
            if (!nodes[cur].expanded && !nodes[cur].terminal && nodes[cur].depth < config.maxDepth) {
                nodes[cur].expanded = true;
                if (nodes[cur].errors.empty()) {
                    nodes[cur].terminal = true;
                } else {
                    auto ex = expander.expand(nodes[cur].state, nodes[cur].errors, config.expansionWidth);
                    json ids = json::array();
                    for (auto& child : ex.children) {
                        SearchNode n;
                        n.id = nodes.size();
                        n.parent = cur;
                        n.depth = nodes[cur].depth + 1;
                        n.state = std::move(child.state);
                        n.feedback = std::move(child.feedback);
                        ids.push_back(n.id);
                        nodes[cur].children.push_back(n.id);
                        nodes.push_back(std::move(n));
                    }
                    if (nodes[cur].children.empty()) nodes[cur].terminal = true;
                    r.trace.push_back({{"event", "expand"}, {"iteration", it}, {"node", cur}, {"children", ids}, {"discarded", ex.discarded}});
                }
            }
            const auto& kids = nodes[cur].children;
            if (kids.empty()) break;
            std::size_t pick = kids.front();
            auto unvisited = std::find_if(kids.begin(), kids.end(), [&](std::size_t k) { return nodes[k].visits == 0; });
            if (unvisited != kids.end()) {
                pick = *unvisited;
            } else {
                double best = -INFINITY;
                for (auto k : kids) {
                    const double v = uct_value(nodes[k], nodes[cur].visits, config.explorationC);
                    if (v > best) {
                        best = v;
                        pick = k;
                    }
                }
            }
            cur = pick;
            path.push_back(cur);
        }

        auto& leaf = nodes[cur];
        if (!leaf.reward) {
            auto ev = evaluator.evaluate(leaf.state);
            if (!(ev.reward >= 0.0 && ev.reward <= 1.0)) throw Error("evaluator reward outside [0, 1]");
            leaf.reward = ev.reward;
            leaf.errors = std::move(ev.errors);
            r.trace.push_back({{"event", "evaluate"}, {"iteration", it}, {"node", cur}, {"reward", *leaf.reward}, {"errors", leaf.errors.size()}});
        }
        const double reward = *leaf.reward;
        for (auto p : path) {
            nodes[p].visits += 1;
            nodes[p].totalReward += reward;
        }
        r.trace.push_back({{"event", "backprop"}, {"iteration", it}, {"path", path}, {"reward", reward}});
        if (observer) observer(r.tree, it);
    }

    r.seedReward = *nodes[0].reward;
    r.bestNode = 0;
    for (const auto& n : nodes) {
        if (!n.reward) continue;
        const auto& b = nodes[r.bestNode];
        if (*n.reward > *b.reward || (*n.reward == *b.reward && n.depth < b.depth)) r.bestNode = n.id;
    }
    r.bestReward = *nodes[r.bestNode].reward;
    r.best = nodes[r.bestNode].state;
    for (std::optional<std::size_t> n = r.bestNode; n; n = nodes[*n].parent) r.trajectory.push_back(*n);
    std::reverse(r.trajectory.begin(), r.trajectory.end());
    return r;
}

MctsResult mcts_optimize(const DefinitionSet& seed, std::span<const DatasetExample> dev, ChatBackend& backend,
                         const MctsConfig& config, const LlmCallOptions& llm) {
    EvaluateOptions eo;
    eo.minibatchSize = config.minibatchSize;
    eo.seed = config.seed;
    eo.predict.maxInFlight = llm.maxInFlight;
    eo.predict.model = llm.model;
    LlmEvaluator evaluator(dev, backend, eo);
    LlmExpander expander(backend, llm);
    return mcts_optimize(seed, evaluator, expander, config);
}

void write_trace_jsonl(const std::filesystem::path& path, const MctsResult& result) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& e : result.trace) out << e.dump() << '\n';
    for (const auto& n : result.tree.nodes) {
        json j{{"event", "node"},
               {"node", n.id},
               {"parent", n.parent ? json(*n.parent) : json(nullptr)},
               {"depth", n.depth},
               {"visits", n.visits},
               {"total_reward", n.totalReward},
               {"reward", n.reward ? json(*n.reward) : json(nullptr)},
               {"terminal", n.terminal},
               {"children", n.children},
               {"feedback", n.feedback},
               {"definitions", to_json(n.state)}};
        out << j.dump() << '\n';
    }
    out << json{{"event", "result"}, {"best_node", result.bestNode}, {"best_reward", result.bestReward},
                {"seed_reward", result.seedReward}, {"trajectory", result.trajectory}}.dump()
        << '\n';
}

}  // namespace notehelp
