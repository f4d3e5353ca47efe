#include "notehelp/cli.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "notehelp/apo.hpp"
#include "notehelp/error.hpp"
#include "notehelp/eval.hpp"
#include "notehelp/fusion.hpp"
#include "notehelp/hash.hpp"
#include "notehelp/ingest.hpp"
#include "notehelp/llm.hpp"
#include "notehelp/manifest.hpp"
#include "notehelp/ranker.hpp"

namespace notehelp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::optional<std::string> now;
    std::optional<fs::path> manifest;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--now", c.now, "Wall-clock time for this run (ISO-8601); recorded in the manifest");
    app->add_option("--manifest", c.manifest, "Manifest path (default: beside the primary output)");
}

struct LlmFlags {
    bool offline = false;
    std::optional<fs::path> replay;
    std::optional<fs::path> record;
    std::string endpoint;
    std::string model = "gpt-4o";
    std::size_t maxInFlight = 4;
};

void add_llm_flags(CLI::App* app, LlmFlags& f) {
    app->add_flag("--offline", f.offline, "Forbid network access; requires --replay");
    app->add_option("--replay", f.replay, "Serve responses from a recorded JSONL file");
    app->add_option("--record", f.record, "Append live exchanges to a JSONL file");
    app->add_option("--endpoint", f.endpoint, "Chat-completions URL (overrides the environment)");
    app->add_option("--model", f.model, "Model name sent with each request");
    app->add_option("--max-in-flight", f.maxInFlight, "Concurrent request limit")->check(CLI::PositiveNumber);
}

BackendOptions backend_options(const LlmFlags& f) {
    return BackendOptions{f.offline, f.replay, f.record, f.endpoint};
}

json llm_config(const LlmFlags& f) {
    return json{{"offline", f.offline},
                {"replay", f.replay ? json(f.replay->generic_string()) : json(nullptr)},
                {"record", f.record ? json(f.record->generic_string()) : json(nullptr)},
                {"model", f.model},
                {"max_in_flight", f.maxInFlight}};
}

void add_llm_inputs(RunManifest& m, const LlmFlags& f) {
    if (f.replay) m.add_input("replay", *f.replay);
}

// A command fills in its manifest and names the primary output it sits beside.
struct Outcome {
    RunManifest manifest;
    fs::path primary;
};

using Action = std::function<Outcome()>;

RunManifest start_manifest(std::string command, const Common& c) {
    RunManifest m;
    m.command = std::move(command);
    m.toolVersion = tool_version();
    if (c.now) {
        parse_iso8601_millis(*c.now);
        m.startedAt = *c.now;
        m.endedAt = *c.now;
    }
    return m;
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_json(const fs::path& path, const json& j) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

template <typename F>
void for_each_jsonl(const fs::path& path, F&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            fn(json::parse(line));
        } catch (const json::exception& e) {
            throw Error(path.string() + ":" + std::to_string(lineNo) + ": " + e.what());
        }
    }
}

json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

SplitRatios parse_ratios(const std::string& text) {
    SplitRatios r;
    unsigned* slots[3] = {&r.train, &r.dev, &r.test};
    std::size_t start = 0;
    for (int i = 0; i < 3; ++i) {
        const auto end = i < 2 ? text.find(':', start) : text.size();
        if (end == std::string::npos) throw UsageError("--split expects TRAIN:DEV:TEST, got " + text);
        const char* b = text.data() + start;
        const char* e = text.data() + end;
        auto [p, ec] = std::from_chars(b, e, *slots[i]);
        if (ec != std::errc{} || p != e) throw UsageError("--split expects TRAIN:DEV:TEST, got " + text);
        start = end + 1;
    }
    if (r.train + r.dev + r.test == 0) throw UsageError("--split ratios sum to zero");
    return r;
}

RankerConfig load_ranker_config(const std::optional<fs::path>& path) {
    if (!path) return RankerConfig{};
    return ranker_config_from_json(read_json(*path));
}

template <typename T>
void append(std::vector<Reject>& into, const Parsed<T>& parsed) {
    into.insert(into.end(), parsed.rejects.begin(), parsed.rejects.end());
}

// ---- ingest ---------------------------------------------------------------

struct IngestOpts {
    Common common;
    fs::path notes;
    std::vector<fs::path> ratings;
    fs::path status;
    std::optional<fs::path> posts;
    fs::path out;
    std::uint64_t seed = 0;
    std::string labels = "status";
    std::optional<fs::path> config;
    std::string split = "7:1:2";
};

Outcome run_ingest(const IngestOpts& o, std::ostream& log) {
    auto m = start_manifest("ingest", o.common);
    const auto ratios = parse_ratios(o.split);
    const bool fromRanker = o.labels == "ranker";
    if (fromRanker && !o.common.now) throw UsageError("--labels ranker needs --now for status stabilization");
    const RankerConfig config = load_ranker_config(o.config);

    m.add_input("notes", o.notes);
    for (const auto& p : o.ratings) m.add_input("ratings", p);
    m.add_input("status", o.status);
    if (o.posts) m.add_input("posts", *o.posts);
    if (o.config) m.add_input("config", *o.config);
    m.seed = o.seed;
    m.config = json{{"labels", o.labels}, {"split", o.split}};
    if (fromRanker) m.config["ranker"] = to_json(config);

    std::vector<Reject> rejects;
    const auto notes = parse_notes_table(o.notes);
    append(rejects, notes);
    const auto ratings = merge_rating_shards(o.ratings);
    append(rejects, ratings);
    const auto statuses = parse_status_table(o.status);
    append(rejects, statuses);
    PostTextIndex posts;
    if (o.posts) {
        const auto parsed = parse_posts_table(*o.posts);
        append(rejects, parsed);
        for (const auto& p : parsed.rows) posts.emplace(p.postId, p.text);
    }

    const auto joined = join_tables(notes.rows, ratings.rows, statuses.rows);
    for (const auto& id : joined.report.notesWithoutStatus)
        rejects.push_back(Reject{"join", 0, id, "NO_STATUS", "note has no status history row"});
    for (const auto& id : joined.report.orphanRatingNoteIds)
        rejects.push_back(Reject{"join", 0, id, "ORPHAN_RATINGS", "ratings reference an unknown note"});

    std::vector<LabeledRecord> labeled;
    if (fromRanker) {
        const auto nowMillis = parse_iso8601_millis(*o.common.now);
        const auto pre = prescore(notes.rows, ratings.rows, config, o.seed);
        const auto scores = score(pre, notes.rows, ratings.rows, statuses.rows, config, o.seed, nowMillis);
        labeled = label_from_ranker(joined.records, aggregate_reason_labels(scores), posts);
    } else {
        labeled = label_from_status_table(joined.records, posts);
    }

    auto cleaned = clean_dataset(labeled);
    rejects.insert(rejects.end(), cleaned.rejects.begin(), cleaned.rejects.end());
    const auto split = stratified_split(std::move(cleaned.examples), ratios, o.seed);
    for (const auto& w : split.warnings) log << "warning: " << w << '\n';

    fs::create_directories(o.out);
    const std::pair<Split, const char*> files[] = {
        {Split::Train, "train.jsonl"}, {Split::Dev, "dev.jsonl"}, {Split::Test, "test.jsonl"}};
    json splitCounts = json::object();
    for (const auto& [s, name] : files) {
        std::vector<DatasetExample> part;
        std::copy_if(split.examples.begin(), split.examples.end(), std::back_inserter(part),
                     [s](const DatasetExample& e) { return e.split == s; });
        write_examples_jsonl(o.out / name, part);
        splitCounts[std::string(to_string(s))] = part.size();
    }
    write_rejects_jsonl(o.out / "rejects.jsonl", rejects);

    std::map<std::string, std::size_t> byCause;
    for (const auto& r : rejects) ++byCause[r.cause];
    json stats{{"dataset", to_json(dataset_stats(split.examples))},
               {"splits", splitCounts},
               {"rejects", byCause},
               {"join",
                {{"notes_without_status", joined.report.notesWithoutStatus.size()},
                 {"orphan_ratings", joined.report.orphanRatings},
                 {"statuses_without_note", joined.report.statusesWithoutNote}}},
               {"warnings", split.warnings}};
    write_json(o.out / "stats.json", stats);

    for (const auto& [s, name] : files) m.add_output(name, o.out / name);
    m.add_output("rejects.jsonl", o.out / "rejects.jsonl");
    m.add_output("stats.json", o.out / "stats.json");
    m.summary = json{{"examples", split.examples.size()}, {"rejects", rejects.size()}, {"splits", splitCounts}};
    log << "ingest: " << split.examples.size() << " examples, " << rejects.size() << " rejects\n";
    return {std::move(m), o.out};
}

// ---- score ----------------------------------------------------------------

struct ScoreOpts {
    Common common;
    std::vector<fs::path> ratings;
    fs::path notes;
    fs::path status;
    std::optional<fs::path> config;
    std::uint64_t seed = 0;
    fs::path out;
};

Outcome run_score(const ScoreOpts& o, std::ostream& log) {
    auto m = start_manifest("score", o.common);
    const RankerConfig config = load_ranker_config(o.config);
    const auto nowMillis = parse_iso8601_millis(*o.common.now);
    m.add_input("notes", o.notes);
    for (const auto& p : o.ratings) m.add_input("ratings", p);
    m.add_input("status", o.status);
    if (o.config) m.add_input("config", *o.config);
    m.seed = o.seed;
    m.config = to_json(config);

    const auto notes = parse_notes_table(o.notes);
    const auto ratings = merge_rating_shards(o.ratings);
    const auto history = parse_status_table(o.status);
    const auto skipped = notes.rejects.size() + ratings.rejects.size() + history.rejects.size();
    if (skipped > 0) log << "warning: skipped " << skipped << " rejected input rows (malformed, duplicate or superseded)\n";

    const auto pre = prescore(notes.rows, ratings.rows, config, o.seed);
    const auto scores = score(pre, notes.rows, ratings.rows, history.rows, config, o.seed, nowMillis);
    ensure_parent(o.out);
    write_scores_jsonl(o.out, scores);
    m.add_output("scores", o.out);

    std::map<std::string, std::size_t> byStatus;
    std::size_t stabilized = 0, reverted = 0;
    for (const auto& s : scores) {
        ++byStatus[std::string(to_string(s.status))];
        stabilized += s.stabilized;
        reverted += s.tagReverted;
    }
    m.summary = json{{"notes", scores.size()},
                     {"statuses", byStatus},
                     {"stabilized", stabilized},
                     {"tag_reverted", reverted},
                     {"filtered_raters", pre.filteredRaters.size()},
                     {"skipped_rows", skipped}};
    log << "score: " << scores.size() << " notes scored\n";
    return {std::move(m), o.out};
}

// ---- stats ----------------------------------------------------------------

struct StatsOpts {
    Common common;
    std::vector<fs::path> in;
    fs::path out;
};

Outcome run_stats(const StatsOpts& o, std::ostream& log) {
    auto m = start_manifest("stats", o.common);
    std::vector<DatasetExample> all;
    for (const auto& p : o.in) {
        m.add_input("examples", p);
        auto part = read_examples_jsonl(p);
        all.insert(all.end(), part.begin(), part.end());
    }
    write_json(o.out, to_json(dataset_stats(all)));
    m.add_output("stats", o.out);
    m.summary = json{{"examples", all.size()}};
    log << "stats: " << all.size() << " examples\n";
    return {std::move(m), o.out};
}

// ---- fusion ---------------------------------------------------------------

struct FusionTrainOpts {
    Common common;
    fs::path train;
    fs::path defsEmb;
    std::size_t epochs = 200;
    double lr = 0.1;
    std::size_t heads = 4;
    double alpha = 1.0;
    double beta = 1.0;
    std::uint64_t seed = 0;
    fs::path out;
};

Outcome run_fusion_train(const FusionTrainOpts& o, std::ostream& log) {
    auto m = start_manifest("fusion train", o.common);
    m.add_input("train", o.train);
    m.add_input("defs-emb", o.defsEmb);
    m.seed = o.seed;
    FusionTrainConfig config;
    config.epochs = o.epochs;
    config.learningRate = o.lr;
    config.heads = o.heads;
    config.weights = LossWeights{o.alpha, o.beta};
    config.seed = o.seed;
    m.config = json{{"epochs", o.epochs}, {"lr", o.lr}, {"heads", o.heads}, {"alpha", o.alpha}, {"beta", o.beta}};

    const auto examples = load_fusion_examples(o.train);
    const auto table = load_embeddings(o.defsEmb);
    const auto reasons = reason_embeddings(table);
    auto result = train_fusion(examples, reasons, config);
    result.model.defsFingerprint = sha256_file(o.defsEmb);
    write_json(o.out, to_json(result.model));
    m.add_output("model", o.out);

    const double first = result.losses.empty() ? 0.0 : result.losses.front();
    const double last = result.losses.empty() ? 0.0 : result.losses.back();
    m.summary = json{{"examples", examples.size()}, {"initial_loss", first}, {"final_loss", last}};
    log << "fusion train: loss " << first << " -> " << last << '\n';
    return {std::move(m), o.out};
}

struct FusionEvalOpts {
    Common common;
    fs::path model;
    fs::path test;
    fs::path defsEmb;
    double threshold = 0.5;
    std::optional<fs::path> predictions;
    fs::path out;
};

Outcome run_fusion_eval(const FusionEvalOpts& o, std::ostream& log) {
    auto m = start_manifest("fusion eval", o.common);
    m.add_input("model", o.model);
    m.add_input("test", o.test);
    m.add_input("defs-emb", o.defsEmb);
    m.config = json{{"threshold", o.threshold}};

    const auto model = fusion_model_from_json(read_json(o.model));
    const auto fp = sha256_file(o.defsEmb);
    if (!model.defsFingerprint.empty() && model.defsFingerprint != fp)
        throw Error("model was trained against different reason embeddings (fingerprint " +
                    model.defsFingerprint.substr(0, 12) + ", got " + fp.substr(0, 12) + ")");
    const auto examples = load_fusion_examples(o.test);
    const auto reasons = reason_embeddings(load_embeddings(o.defsEmb));
    const auto preds = fusion_predict(model, reasons, examples);

    std::vector<Helpfulness> predicted, gold;
    std::vector<PredictedLabels> predictedTags;
    std::vector<ReasonSet> goldTags;
    json rows = json::array();
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto h = preds[i].helpfulProb >= 0.5 ? Helpfulness::Helpful : Helpfulness::NotHelpful;
        const auto tags = decode_reasons(preds[i], o.threshold);
        predicted.push_back(h);
        gold.push_back(examples[i].helpful ? Helpfulness::Helpful : Helpfulness::NotHelpful);
        predictedTags.push_back(PredictedLabels{tags, 0});
        goldTags.push_back(examples[i].reasons);
        json names = json::array();
        for (auto t : to_tags(tags)) names.push_back(wire_name(t));
        rows.push_back(json{{"id", examples[i].id},
                            {"helpful_prob", preds[i].helpfulProb},
                            {"helpfulness", to_string(h)},
                            {"reasons", names}});
    }
    const auto bin = binary_f1(predicted, gold);
    const auto multi = multilabel_prf(predictedTags, goldTags);
    write_json(o.out, json{{"examples", examples.size()}, {"helpfulness", to_json(bin)}, {"reasons", to_json(multi)}});
    m.add_output("metrics", o.out);
    if (o.predictions) {
        ensure_parent(*o.predictions);
        std::ofstream pout(*o.predictions, std::ios::binary);
        if (!pout) throw Error("cannot write " + o.predictions->string());
        for (const auto& r : rows) pout << r.dump() << '\n';
        pout.close();
        m.add_output("predictions", *o.predictions);
    }
    m.summary = json{{"helpful_f1", bin.f1()}, {"reason_micro_f1", multi.microF1}};
    log << "fusion eval: helpful F1 " << bin.f1() << ", reason micro-F1 " << multi.microF1 << '\n';
    return {std::move(m), o.out};
}

// ---- apo ------------------------------------------------------------------

struct ApoSeedOpts {
    Common common;
    LlmFlags llm;
    fs::path train;
    std::size_t perCategory = 40;
    std::uint64_t seed = 0;
    fs::path out;
};

LlmCallOptions call_options(const LlmFlags& f) {
    LlmCallOptions c;
    c.model = f.model;
    c.maxInFlight = f.maxInFlight;
    return c;
}

Outcome run_apo_seed(const ApoSeedOpts& o, std::ostream& log) {
    auto m = start_manifest("apo seed", o.common);
    m.add_input("train", o.train);
    add_llm_inputs(m, o.llm);
    m.seed = o.seed;
    m.config = json{{"per_category", o.perCategory}, {"llm", llm_config(o.llm)}};

    BackendStack stack(backend_options(o.llm));
    const auto train = read_examples_jsonl(o.train);
    const auto samples = sample_seed_instances(train, o.perCategory, o.seed);
    for (const auto& s : samples.shortages) log << "warning: " << s << '\n';
    const auto defs = generate_seed_definitions(samples, stack.backend(), call_options(o.llm));
    ensure_parent(o.out);
    write_definitions(o.out, defs);
    m.add_output("definitions", o.out);
    m.summary = json{{"shortages", samples.shortages}};
    log << "apo seed: wrote " << kReasonCount << " definitions\n";
    return {std::move(m), o.out};
}

struct ApoOptimizeOpts {
    Common common;
    LlmFlags llm;
    fs::path seedDefs;
    fs::path dev;
    MctsConfig mcts;
    std::string scoring = "full";
    fs::path out;
    std::optional<fs::path> trace;
};

Outcome run_apo_optimize(ApoOptimizeOpts o, std::ostream& log) {
    auto m = start_manifest("apo optimize", o.common);
    m.add_input("seed-defs", o.seedDefs);
    m.add_input("dev", o.dev);
    add_llm_inputs(m, o.llm);
    m.seed = o.mcts.seed;
    o.mcts.validate();
    const auto scoring = reason_scoring_from_string(o.scoring);
    if (!scoring) throw UsageError("--scoring must be full or capped");
    m.config = json{{"iterations", o.mcts.iterations},
                    {"width", o.mcts.expansionWidth},
                    {"max_depth", o.mcts.maxDepth},
                    {"exploration", o.mcts.explorationC},
                    {"minibatch", o.mcts.minibatchSize},
                    {"scoring", o.scoring},
                    {"llm", llm_config(o.llm)}};

    BackendStack stack(backend_options(o.llm));
    const auto seed = load_definitions(o.seedDefs);
    const auto dev = read_examples_jsonl(o.dev);
    EvaluateOptions eo;
    eo.minibatchSize = o.mcts.minibatchSize;
    eo.seed = o.mcts.seed;
    eo.scoring = *scoring;
    eo.predict.maxInFlight = o.llm.maxInFlight;
    eo.predict.model = o.llm.model;
    LlmEvaluator evaluator(dev, stack.backend(), eo);
    LlmExpander expander(stack.backend(), call_options(o.llm));
    const auto result = mcts_optimize(seed, evaluator, expander, o.mcts);

    ensure_parent(o.out);
    write_definitions(o.out, result.best);
    m.add_output("definitions", o.out);
    fs::path trace = o.trace ? *o.trace : fs::path(o.out.string() + ".trace.jsonl");
    ensure_parent(trace);
    write_trace_jsonl(trace, result);
    m.add_output("trace", trace);
    m.summary = json{{"seed_reward", result.seedReward},
                     {"best_reward", result.bestReward},
                     {"best_node", result.bestNode},
                     {"nodes", result.tree.nodes.size()},
                     {"trajectory", result.trajectory}};
    log << "apo optimize: reward " << result.seedReward << " -> " << result.bestReward << " (node "
        << result.bestNode << ")\n";
    return {std::move(m), o.out};
}

// ---- predict --------------------------------------------------------------

const PromptTemplate& template_named(const std::string& id) {
    const auto t = template_from_string(id);
    if (!t) throw UsageError("unknown template " + id);
    return prompt_template(*t);
}

struct PredictOpts {
    Common common;
    LlmFlags llm;
    fs::path in;
    std::string templ = "SEED_DEF";
    std::optional<fs::path> defs;
    int maxTokens = 256;
    fs::path out;
};

PredictOptions predict_options(const LlmFlags& f, int maxTokens) {
    return PredictOptions{f.maxInFlight, f.model, maxTokens};
}

Outcome run_predict(const PredictOpts& o, std::ostream& log) {
    auto m = start_manifest("predict", o.common);
    m.add_input("in", o.in);
    if (o.defs) m.add_input("defs", *o.defs);
    add_llm_inputs(m, o.llm);
    m.config = json{{"template", o.templ}, {"max_tokens", o.maxTokens}, {"llm", llm_config(o.llm)}};

    const auto& tmpl = template_named(o.templ);
    std::optional<DefinitionSet> defs;
    if (o.defs) defs = load_definitions(*o.defs);
    BackendStack stack(backend_options(o.llm));
    const auto examples = read_examples_jsonl(o.in);
    const auto results = predict_batch(examples, tmpl, defs ? &*defs : nullptr, stack.backend(),
                                       predict_options(o.llm, o.maxTokens));
    ensure_parent(o.out);
    std::ofstream out(o.out, std::ios::binary);
    if (!out) throw Error("cannot write " + o.out.string());
    std::size_t failures = 0;
    for (const auto& r : results) {
        failures += !r.output.has_value();
        out << to_json(r).dump() << '\n';
    }
    out.close();
    m.add_output("predictions", o.out);
    m.summary = json{{"examples", results.size()}, {"failures", failures}};
    log << "predict: " << results.size() << " examples, " << failures << " failures\n";
    return {std::move(m), o.out};
}

// ---- eval -----------------------------------------------------------------

struct PredictedRow {
    std::optional<Helpfulness> helpfulness;  // nullopt: failed or unlabeled
    PredictedLabels labels;
};

std::map<std::string, PredictedRow, std::less<>> load_llm_predictions(const fs::path& path) {
    std::map<std::string, PredictedRow, std::less<>> rows;
    for_each_jsonl(path, [&](const json& j) {
        PredictedRow row;
        if (j.contains("helpfulness")) {
            const auto h = j["helpfulness"].get<std::string>();
            row.helpfulness = h == "helpful" ? Helpfulness::Helpful : Helpfulness::NotHelpful;
            for (const auto& n : j.value("reasons", json::array())) {
                if (auto t = tag_from_wire(n.get<std::string>())) row.labels.tags.set(index_of(*t));
            }
            row.labels.unknown = j.value("unknown_reasons", json::array()).size();
        }
        rows[j.at("id").get<std::string>()] = row;
    });
    return rows;
}

std::map<std::string, PredictedRow, std::less<>> load_score_predictions(const fs::path& path) {
    std::map<std::string, PredictedRow, std::less<>> rows;
    for_each_jsonl(path, [&](const json& j) {
        PredictedRow row;
        const auto status = status_from_string(j.at("status").get<std::string>());
        if (!status) throw Error("unknown status in " + path.string());
        if (*status == Status::CurrentlyRatedHelpful) row.helpfulness = Helpfulness::Helpful;
        if (*status == Status::CurrentlyRatedNotHelpful) row.helpfulness = Helpfulness::NotHelpful;
        for (const auto& n : j.value("tags", json::array())) {
            if (auto t = tag_from_wire(n.get<std::string>())) row.labels.tags.set(index_of(*t));
        }
        rows[j.at("note_id").get<std::string>()] = row;
    });
    return rows;
}

struct EvalHelpfulnessOpts {
    Common common;
    fs::path gold;
    std::optional<fs::path> pred;
    std::optional<fs::path> scores;
    std::string scoring = "full";
    fs::path out;
};

Outcome run_eval_helpfulness(const EvalHelpfulnessOpts& o, std::ostream& log) {
    auto m = start_manifest("eval helpfulness", o.common);
    if (o.pred.has_value() == o.scores.has_value()) throw UsageError("give exactly one of --pred or --scores");
    const auto scoring = reason_scoring_from_string(o.scoring);
    if (!scoring) throw UsageError("--scoring must be full or capped");
    m.add_input("gold", o.gold);
    m.add_input(o.pred ? "pred" : "scores", o.pred ? *o.pred : *o.scores);
    m.config = json{{"scoring", o.scoring}, {"source", o.pred ? "predictions" : "scores"}};

    const auto gold = read_examples_jsonl(o.gold);
    const auto rows = o.pred ? load_llm_predictions(*o.pred) : load_score_predictions(*o.scores);
    std::vector<Helpfulness> predicted, goldLabels;
    std::vector<PredictedLabels> predictedTags;
    std::vector<ReasonSet> goldTags;
    std::size_t missing = 0, unlabeled = 0;
    for (const auto& ex : gold) {
        goldLabels.push_back(ex.label);
        goldTags.push_back(ex.reasons);
        const auto it = rows.find(ex.noteId);
        const auto flipped = ex.label == Helpfulness::Helpful ? Helpfulness::NotHelpful : Helpfulness::Helpful;
        if (it == rows.end()) {
            ++missing;
            predicted.push_back(flipped);
            predictedTags.push_back({});
        } else if (!it->second.helpfulness) {
            // A failed answer or an undecided note counts as wrong.
            ++unlabeled;
            predicted.push_back(flipped);
            predictedTags.push_back(it->second.labels);
        } else {
            predicted.push_back(*it->second.helpfulness);
            predictedTags.push_back(it->second.labels);
        }
    }
    const auto bin = binary_f1(predicted, goldLabels);
    const auto multi = multilabel_prf(predictedTags, goldTags, *scoring);
    write_json(o.out, json{{"examples", gold.size()},
                           {"missing", missing},
                           {"unlabeled", unlabeled},
                           {"helpfulness", to_json(bin)},
                           {"reasons", to_json(multi)}});
    m.add_output("metrics", o.out);
    m.summary = json{{"helpful_f1", bin.f1()}, {"reason_micro_f1", multi.microF1}, {"missing", missing}};
    log << "eval: helpful F1 " << bin.f1() << ", reason micro-F1 " << multi.microF1 << '\n';
    return {std::move(m), o.out};
}

struct EvalSufficiencyOpts {
    Common common;
    LlmFlags llm;
    fs::path in;
    std::string templ = "ORIGINAL";
    std::optional<fs::path> defs;
    fs::path out;
};

Outcome run_eval_sufficiency(const EvalSufficiencyOpts& o, std::ostream& log) {
    auto m = start_manifest("eval sufficiency", o.common);
    m.add_input("in", o.in);
    if (o.defs) m.add_input("defs", *o.defs);
    add_llm_inputs(m, o.llm);
    m.config = json{{"template", o.templ}, {"llm", llm_config(o.llm)}};

    const auto& tmpl = template_named(o.templ);
    std::optional<DefinitionSet> defs;
    if (o.defs) defs = load_definitions(*o.defs);
    BackendStack stack(backend_options(o.llm));
    const auto examples = load_sufficiency_examples(o.in);
    const auto report =
        sufficiency_eval(examples, tmpl, defs ? &*defs : nullptr, stack.backend(), predict_options(o.llm, 256));
    json preds = json::array();
    for (const auto& p : report.predictions) preds.push_back(to_json(p));
    write_json(o.out, json{{"examples", examples.size()},
                           {"failures", report.failures},
                           {"nei", to_json(report.metrics)},
                           {"predictions", preds}});
    m.add_output("metrics", o.out);
    m.summary = json{{"nei_f1", report.metrics.f1()}, {"failures", report.failures}};
    log << "eval sufficiency: NEI F1 " << report.metrics.f1() << '\n';
    return {std::move(m), o.out};
}

struct EvalFactcheckOpts {
    Common common;
    LlmFlags llm;
    fs::path in;
    std::string mode = "direct";
    fs::path out;
};

Outcome run_eval_factcheck(const EvalFactcheckOpts& o, std::ostream& log) {
    auto m = start_manifest("eval factcheck", o.common);
    m.add_input("in", o.in);
    add_llm_inputs(m, o.llm);
    FcMode mode;
    if (o.mode == "direct") {
        mode = FcMode::Direct;
    } else if (o.mode == "helpfulness") {
        mode = FcMode::WithHelpfulness;
    } else {
        throw UsageError("--mode must be direct or helpfulness");
    }
    m.config = json{{"mode", o.mode}, {"llm", llm_config(o.llm)}};

    BackendStack stack(backend_options(o.llm));
    const auto examples = load_fc_examples(o.in);
    const auto report = fact_check_eval(examples, stack.backend(), mode, predict_options(o.llm, 256));
    write_json(o.out, to_json(report));
    m.add_output("report", o.out);
    m.summary = json{{"accuracy", report.accuracy}, {"unparsed", report.unparsed}};
    log << "eval factcheck: accuracy " << report.accuracy << '\n';
    return {std::move(m), o.out};
}

// Per-example correctness from a fact-check report or a JSONL of {id, correct}.
std::vector<std::pair<std::string, bool>> load_correctness(const fs::path& path) {
    std::vector<std::pair<std::string, bool>> rows;
    auto take = [&](const json& j) { rows.emplace_back(j.at("id").get<std::string>(), j.at("correct").get<bool>()); };
    if (path.extension() == ".jsonl") {
        for_each_jsonl(path, take);
    } else {
        const auto j = read_json(path);
        try {
            for (const auto& o : j.at("outcomes")) take(o);
        } catch (const json::exception& e) {
            throw Error(path.string() + ": " + e.what());
        }
    }
    return rows;
}

struct EvalSignificanceOpts {
    Common common;
    fs::path a;
    fs::path b;
    std::size_t resamples = 10000;
    std::uint64_t seed = 0;
    fs::path out;
};

Outcome run_eval_significance(const EvalSignificanceOpts& o, std::ostream& log) {
    auto m = start_manifest("eval significance", o.common);
    m.add_input("a", o.a);
    m.add_input("b", o.b);
    m.seed = o.seed;
    m.config = json{{"resamples", o.resamples}};

    const auto ra = load_correctness(o.a);
    const auto rb = load_correctness(o.b);
    if (ra.size() != rb.size()) throw Error("runs cover different example sets");
    std::map<std::string, bool, std::less<>> byId(rb.begin(), rb.end());
    // std::vector<bool> is not contiguous, so spans need plain arrays.
    const std::size_t n = ra.size();
    auto a = std::make_unique<bool[]>(n);
    auto b = std::make_unique<bool[]>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto it = byId.find(ra[i].first);
        if (it == byId.end()) throw Error("example " + ra[i].first + " is missing from " + o.b.string());
        a[i] = ra[i].second;
        b[i] = it->second;
    }
    const auto res = significance_test(std::span<const bool>(a.get(), n), std::span<const bool>(b.get(), n),
                                       o.resamples, o.seed);
    write_json(o.out, to_json(res));
    m.add_output("result", o.out);
    m.summary = json{{"p_value", res.pValue}, {"observed_diff", res.observedDiff}};
    log << "eval significance: p = " << res.pValue << '\n';
    return {std::move(m), o.out};
}

// ---- replay ---------------------------------------------------------------

struct ReplayOpts {
    fs::path manifest;
};

}  // namespace

namespace {

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, bool allowReplay);

int run_replay(const ReplayOpts& o, std::ostream& out, std::ostream& err) {
    const auto recorded = read_manifest(o.manifest);
    if (recorded.command == "replay") throw UsageError("cannot replay a replay");
    if (auto stale = stale_fingerprints(recorded.inputs); !stale.empty()) {
        std::string msg = "inputs changed since the recorded run:";
        for (const auto& s : stale) msg += " " + s;
        throw Error(msg);
    }
    const int code = dispatch(recorded.argv, out, err, false);
    if (code != kExitOk) return code;
    if (auto stale = stale_fingerprints(recorded.outputs); !stale.empty()) {
        std::string msg = "replayed outputs differ:";
        for (const auto& s : stale) msg += " " + s;
        throw Error(msg);
    }
    out << "replay: " << recorded.outputs.size() << " outputs reproduced\n";
    return kExitOk;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, bool allowReplay) {
    CLI::App app{"Community note helpfulness toolkit", "notehelp"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(tool_version()));

    Action action;
    std::optional<ReplayOpts> replay;

    IngestOpts ingest;
    auto* ing = app.add_subcommand("ingest", "Join, clean and split the raw tables");
    ing->add_option("--notes", ingest.notes, "Notes table (TSV)")->required();
    ing->add_option("--ratings", ingest.ratings, "Ratings shards (TSV)")->required()->expected(1, -1);
    ing->add_option("--status", ingest.status, "Note status history table (TSV)")->required();
    ing->add_option("--posts", ingest.posts, "Post text table (TSV: tweetId, text)");
    ing->add_option("--out", ingest.out, "Output directory")->required();
    ing->add_option("--seed", ingest.seed, "Split seed");
    ing->add_option("--labels", ingest.labels, "Label source")->check(CLI::IsMember({"status", "ranker"}));
    ing->add_option("--config", ingest.config, "Ranker config JSON (with --labels ranker)");
    ing->add_option("--split", ingest.split, "Split ratios TRAIN:DEV:TEST");
    add_common(ing, ingest.common);
    ing->callback([&] { action = [&] { return run_ingest(ingest, out); }; });

    ScoreOpts sc;
    auto* scs = app.add_subcommand("score", "Run the note ranking algorithm");
    scs->add_option("--ratings", sc.ratings, "Ratings shards (TSV)")->required()->expected(1, -1);
    scs->add_option("--notes", sc.notes, "Notes table (TSV)")->required();
    scs->add_option("--status", sc.status, "Note status history table (TSV)")->required();
    scs->add_option("--config", sc.config, "Ranker config JSON");
    scs->add_option("--seed", sc.seed, "Seed for factor initialization");
    scs->add_option("--out", sc.out, "Scored notes JSONL")->required();
    scs->add_option("--manifest", sc.common.manifest, "Manifest path (default: beside the output)");
    scs->add_option("--now", sc.common.now, "Scoring time (ISO-8601)")->required();
    scs->callback([&] { action = [&] { return run_score(sc, out); }; });

    StatsOpts st;
    auto* sts = app.add_subcommand("stats", "Dataset statistics for example files");
    sts->add_option("--in", st.in, "Example JSONL files")->required()->expected(1, -1);
    sts->add_option("--out", st.out, "Stats JSON")->required();
    add_common(sts, st.common);
    sts->callback([&] { action = [&] { return run_stats(st, out); }; });

    auto* fusion = app.add_subcommand("fusion", "Attention fusion classifier");
    fusion->require_subcommand(1);
    FusionTrainOpts ft;
    auto* fts = fusion->add_subcommand("train", "Train on note embeddings");
    fts->add_option("--train", ft.train, "Training embeddings JSONL")->required();
    fts->add_option("--defs-emb", ft.defsEmb, "Reason definition embeddings JSONL")->required();
    fts->add_option("--epochs", ft.epochs, "Gradient steps")->check(CLI::PositiveNumber);
    fts->add_option("--lr", ft.lr, "Learning rate")->check(CLI::PositiveNumber);
    fts->add_option("--heads", ft.heads, "Attention heads")->check(CLI::PositiveNumber);
    fts->add_option("--alpha", ft.alpha, "Helpfulness loss weight");
    fts->add_option("--beta", ft.beta, "Reason loss weight");
    fts->add_option("--seed", ft.seed, "Initialization seed");
    fts->add_option("--out", ft.out, "Checkpoint JSON")->required();
    add_common(fts, ft.common);
    fts->callback([&] { action = [&] { return run_fusion_train(ft, out); }; });

    FusionEvalOpts fe;
    auto* fes = fusion->add_subcommand("eval", "Evaluate a checkpoint");
    fes->add_option("--model", fe.model, "Checkpoint JSON")->required();
    fes->add_option("--test", fe.test, "Test embeddings JSONL")->required();
    fes->add_option("--defs-emb", fe.defsEmb, "Reason definition embeddings JSONL")->required();
    fes->add_option("--threshold", fe.threshold, "Reason probability threshold")->check(CLI::Range(0.0, 1.0));
    fes->add_option("--predictions", fe.predictions, "Per-example predictions JSONL");
    fes->add_option("--out", fe.out, "Metrics JSON")->required();
    add_common(fes, fe.common);
    fes->callback([&] { action = [&] { return run_fusion_eval(fe, out); }; });

    auto* apo = app.add_subcommand("apo", "Reason definition optimization");
    apo->require_subcommand(1);
    ApoSeedOpts as;
    auto* ass = apo->add_subcommand("seed", "Generate seed definitions from sampled instances");
    ass->add_option("--train", as.train, "Training examples JSONL")->required();
    ass->add_option("--per-category", as.perCategory, "Instances sampled per reason")->check(CLI::PositiveNumber);
    ass->add_option("--seed", as.seed, "Sampling seed");
    ass->add_option("--out", as.out, "Definitions JSON")->required();
    add_llm_flags(ass, as.llm);
    add_common(ass, as.common);
    ass->callback([&] { action = [&] { return run_apo_seed(as, out); }; });

    ApoOptimizeOpts ao;
    auto* aos = apo->add_subcommand("optimize", "Search for better definitions");
    aos->add_option("--seed-defs", ao.seedDefs, "Seed definitions JSON")->required();
    aos->add_option("--dev", ao.dev, "Development examples JSONL")->required();
    aos->add_option("--iterations", ao.mcts.iterations, "Search iterations");
    aos->add_option("--width", ao.mcts.expansionWidth, "Children per expansion");
    aos->add_option("--max-depth", ao.mcts.maxDepth, "Maximum tree depth");
    aos->add_option("--exploration", ao.mcts.explorationC, "UCT exploration constant");
    aos->add_option("--minibatch", ao.mcts.minibatchSize, "Examples per evaluation");
    aos->add_option("--scoring", ao.scoring, "Reason scoring")->check(CLI::IsMember({"full", "capped"}));
    aos->add_option("--seed", ao.mcts.seed, "Minibatch seed");
    aos->add_option("--out", ao.out, "Best definitions JSON")->required();
    aos->add_option("--trace", ao.trace, "Search trace JSONL (default: <out>.trace.jsonl)");
    add_llm_flags(aos, ao.llm);
    add_common(aos, ao.common);
    aos->callback([&] { action = [&] { return run_apo_optimize(ao, out); }; });

    PredictOpts pr;
    auto* prs = app.add_subcommand("predict", "Predict helpfulness and reasons with an LLM");
    prs->add_option("--in", pr.in, "Examples JSONL")->required();
    prs->add_option("--template", pr.templ, "Prompt template id (ORIGINAL, SEED_DEF, OPTIMIZED)");
    prs->add_option("--defs", pr.defs, "Definitions JSON");
    prs->add_option("--max-tokens", pr.maxTokens, "Completion token limit")->check(CLI::PositiveNumber);
    prs->add_option("--out", pr.out, "Predictions JSONL")->required();
    add_llm_flags(prs, pr.llm);
    add_common(prs, pr.common);
    prs->callback([&] { action = [&] { return run_predict(pr, out); }; });

    auto* ev = app.add_subcommand("eval", "Metrics and transfer evaluations");
    ev->require_subcommand(1);
    EvalHelpfulnessOpts eh;
    auto* ehs = ev->add_subcommand("helpfulness", "Score predictions or ranker output against gold examples");
    ehs->add_option("--gold", eh.gold, "Gold examples JSONL")->required();
    ehs->add_option("--pred", eh.pred, "Predictions JSONL from predict");
    ehs->add_option("--scores", eh.scores, "Scored notes JSONL from score");
    ehs->add_option("--scoring", eh.scoring, "Reason scoring")->check(CLI::IsMember({"full", "capped"}));
    ehs->add_option("--out", eh.out, "Metrics JSON")->required();
    add_common(ehs, eh.common);
    ehs->callback([&] { action = [&] { return run_eval_helpfulness(eh, out); }; });

    EvalSufficiencyOpts es;
    auto* ess = ev->add_subcommand("sufficiency", "Evidence sufficiency transfer");
    ess->add_option("--in", es.in, "Sufficiency examples JSONL")->required();
    ess->add_option("--template", es.templ, "Prompt template id");
    ess->add_option("--defs", es.defs, "Definitions JSON");
    ess->add_option("--out", es.out, "Metrics JSON")->required();
    add_llm_flags(ess, es.llm);
    add_common(ess, es.common);
    ess->callback([&] { action = [&] { return run_eval_sufficiency(es, out); }; });

    EvalFactcheckOpts ef;
    auto* efs = ev->add_subcommand("factcheck", "Fact-checking with or without helpfulness annotations");
    efs->add_option("--in", ef.in, "Fact-check examples JSONL")->required();
    efs->add_option("--mode", ef.mode, "direct or helpfulness")->check(CLI::IsMember({"direct", "helpfulness"}));
    efs->add_option("--out", ef.out, "Report JSON")->required();
    add_llm_flags(efs, ef.llm);
    add_common(efs, ef.common);
    efs->callback([&] { action = [&] { return run_eval_factcheck(ef, out); }; });

    EvalSignificanceOpts eg;
    auto* egs = ev->add_subcommand("significance", "Paired bootstrap test between two runs");
    egs->add_option("--a", eg.a, "Report JSON or {id, correct} JSONL")->required();
    egs->add_option("--b", eg.b, "Report JSON or {id, correct} JSONL")->required();
    egs->add_option("--resamples", eg.resamples, "Bootstrap resamples")->check(CLI::PositiveNumber);
    egs->add_option("--seed", eg.seed, "Resampling seed");
    egs->add_option("--out", eg.out, "Result JSON")->required();
    add_common(egs, eg.common);
    egs->callback([&] { action = [&] { return run_eval_significance(eg, out); }; });

    ReplayOpts rp;
    auto* rps = app.add_subcommand("replay", "Re-run a recorded command and verify its outputs");
    rps->add_option("--manifest", rp.manifest, "Manifest written by an earlier run")->required();
    rps->callback([&] { replay = rp; });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    if (replay) {
        if (!allowReplay) throw UsageError("cannot replay a replay");
        return run_replay(*replay, out, err);
    }
    if (!action) throw UsageError("no command given");
    auto outcome = action();
    outcome.manifest.argv = args;
    const auto path = [&] {
        for (const Common* c : {&ingest.common, &sc.common, &st.common, &ft.common, &fe.common, &as.common,
                                &ao.common, &pr.common, &eh.common, &es.common, &ef.common, &eg.common}) {
            if (c->manifest) return *c->manifest;
        }
        return manifest_path_for(outcome.primary);
    }();
    ensure_parent(path);
    write_manifest(path, outcome.manifest);
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        return dispatch(args, out, err, true);
    } catch (const UsageError& e) {
        err << "notehelp: usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ChatError& e) {
        err << "notehelp: error: " << e.what() << '\n';
        for (const auto& a : e.attempts()) {
            err << "  attempt " << a.attempt << ": status " << a.httpStatus << ' ' << a.error << '\n';
        }
        return kExitDomain;
    } catch (const std::exception& e) {
        err << "notehelp: error: " << e.what() << '\n';
        return kExitDomain;
    }
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace notehelp::cli
