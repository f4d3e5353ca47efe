#include <doctest.h>

#include <atomic>
#include <set>

#include <json.hpp>

#include "fixtures.hpp"
#include "notehelp/apo.hpp"
#include "oracles.hpp"

using namespace notehelp;
using namespace notehelp::testing;
using nlohmann::json;

namespace {

DatasetExample labeled(std::string id, std::vector<ReasonTag> tags) {
    DatasetExample e;
    e.noteId = id;
    e.postText = "claim " + id;
    e.noteText = "note " + id;
    e.reasons = to_set(tags);
    e.label = polarity_of(tags.front()) == Polarity::Helpful ? Helpfulness::Helpful : Helpfulness::NotHelpful;
    return e;
}

DefinitionSet filled(const std::string& prefix) {
    DefinitionSet d;
    for (auto t : all_reason_tags()) d[t] = prefix + " " + std::string(wire_name(t));
    return d;
}

std::string answer(const std::vector<std::string>& reasons) {
    std::string r;
    for (const auto& x : reasons) r += (r.empty() ? "" : ";") + x;
    return json{{"helpfulness", "helpful"}, {"reasons", r}}.dump();
}

json defs_json(const DefinitionSet& d, std::size_t drop = kReasonCount) {
    json j;
    for (std::size_t t = 0; t < kReasonCount; ++t) {
        if (t != drop) j[std::string(wire_name(tag_at(t)))] = d.text[t];
    }
    return j;
}

}  // namespace

TEST_SUITE("apo") {

TEST_CASE("seed sampling") {
    std::vector<DatasetExample> train;
    for (int i = 0; i < 100; ++i) train.push_back(labeled("c" + std::to_string(i), {ReasonTag::Clear}));
    for (int i = 0; i < 5; ++i) train.push_back(labeled("e" + std::to_string(i), {ReasonTag::Empathetic}));
    for (int i = 0; i < 30; ++i) train.push_back(labeled("m" + std::to_string(i), {ReasonTag::Clear, ReasonTag::GoodSources}));

    const auto s = sample_seed_instances(train, 40, 3);
    CHECK(s.byTag.at(ReasonTag::Clear).size() == 40);
    CHECK(s.byTag.at(ReasonTag::Empathetic).size() == 5);
    CHECK(s.byTag.at(ReasonTag::GoodSources).size() == 30);
    bool shortageLogged = false;
    for (const auto& m : s.shortages) shortageLogged |= m.rfind("helpfulEmpathetic", 0) == 0;
    CHECK(shortageLogged);

    std::set<std::string> seen;
    for (const auto& [tag, examples] : s.byTag) {
        for (const auto& e : examples) {
            CHECK(e.reasons.test(index_of(tag)));
            CHECK(seen.insert(e.noteId).second);  // at most one tag per example
        }
    }
    const auto again = sample_seed_instances(train, 40, 3);
    CHECK(again.byTag.at(ReasonTag::Clear) == s.byTag.at(ReasonTag::Clear));
    const auto other = sample_seed_instances(train, 40, 4);
    CHECK(other.byTag.at(ReasonTag::Clear) != s.byTag.at(ReasonTag::Clear));
}

TEST_CASE("seed definitions") {
    std::vector<DatasetExample> train;
    for (std::size_t t = 0; t < kReasonCount; ++t) {
        train.push_back(labeled("x" + std::to_string(t), {tag_at(t)}));
    }
    const auto samples = sample_seed_instances(train, 40, 1);
    FunctionBackend echo([](const ChatRequest& r) {
        const auto& text = r.messages.back().content;
        for (auto t : all_reason_tags()) {
            if (text.find(" is " + std::string(wire_name(t)) + ". ") != std::string::npos) {
                return "DEF(" + std::string(wire_name(t)) + ")";
            }
        }
        return std::string("DEF(?)");
    });
    const auto defs = generate_seed_definitions(samples, echo);
    std::set<std::string> distinct(defs.text.begin(), defs.text.end());
    CHECK(distinct.size() == kReasonCount);
    CHECK(defs[ReasonTag::Clear] == "DEF(helpfulClear)");

    FunctionBackend failing([&](const ChatRequest& r) {
        if (r.messages.back().content.find("note x4") != std::string::npos) throw ChatError("boom", {});
        return std::string("ok");
    });
    try {
        generate_seed_definitions(samples, failing);
        FAIL("expected the failing tag to abort");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find(std::string(wire_name(tag_at(4)))) != std::string::npos);
    }
}

TEST_CASE("evaluate definitions") {
    const std::vector<DatasetExample> dev = {
        labeled("a", {ReasonTag::Clear, ReasonTag::GoodSources}),
        labeled("b", {ReasonTag::Informative}),
        labeled("c", {ReasonTag::Empathetic, ReasonTag::UniqueContext}),
        labeled("d", {ReasonTag::AddressesClaim}),
    };
    const auto defs = filled("def");

    FunctionBackend gold([&](const ChatRequest& r) {
        const auto& text = r.messages.back().content;
        for (const auto& e : dev) {
            if (text.find(e.postText) != std::string::npos) {
                std::vector<std::string> names;
                for (auto t : to_tags(e.reasons)) names.emplace_back(wire_name(t));
                return answer(names);
            }
        }
        return std::string();
    });
    EvaluateOptions opts;
    opts.minibatchSize = 4;
    const auto perfect = evaluate_definitions(defs, dev, gold, opts);
    CHECK(perfect.reward == 1.0);
    CHECK(perfect.errors.empty());

    FunctionBackend wrong([](const ChatRequest&) { return answer({"helpfulEmpathetic", "helpfulImportantContext"}); });
    // Example c shares Empathetic; drop it so nothing overlaps.
    const std::vector<DatasetExample> noOverlap = {dev[0], dev[1], dev[3]};
    CHECK(evaluate_definitions(defs, noOverlap, wrong, opts).reward == 0.0);

    // Scripted mix: exact, partial, unknown tag, unparseable.
    FunctionBackend mixed([](const ChatRequest& r) {
        const auto& text = r.messages.back().content;
        if (text.find("claim a") != std::string::npos) return answer({"helpfulClear", "helpfulGoodSources"});
        if (text.find("claim b") != std::string::npos) return answer({"helpfulInformative", "helpfulClear"});
        if (text.find("claim c") != std::string::npos) return answer({"helpfulEmpathetic", "helpfulMagic"});
        return std::string("no idea");
    });
    const auto ev = evaluate_definitions(defs, dev, mixed, opts);
    std::vector<PredictedLabels> predicted = {
        {to_set({ReasonTag::Clear, ReasonTag::GoodSources}), 0},
        {to_set({ReasonTag::Informative, ReasonTag::Clear}), 0},
        {to_set({ReasonTag::Empathetic}), 1},
        {},
    };
    std::vector<ReasonSet> golds;
    for (const auto& e : dev) golds.push_back(e.reasons);
    const auto oracle = multilabel_oracle(predicted, golds, ReasonScoring::FullSet);
    // tp 4, fp 2, fn 2
    CHECK(oracle.micro.f1 == doctest::Approx(2.0 / 3.0));
    CHECK(std::abs(ev.reward - oracle.micro.f1) < 1e-12);
    CHECK(ev.errors.size() == 3);

    CHECK_THROWS_AS(evaluate_definitions(defs, {}, gold, opts), Error);
}

TEST_CASE("minibatch indices") {
    const auto a = minibatch_indices(100, 32, 5);
    CHECK(a.size() == 32);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 32);
    CHECK(a == minibatch_indices(100, 32, 5));
    CHECK(minibatch_indices(10, 32, 5).size() == 10);
}

TEST_CASE("expand node") {
    const auto state = filled("base");
    const std::vector<ErrorCase> errors = {{labeled("a", {ReasonTag::Clear}), "{}"}};
    std::atomic<int> feedbackCalls{0};
    auto make = [&](bool dropOne) {
        return FunctionBackend([&, dropOne](const ChatRequest& r) {
            const auto& text = r.messages.back().content;
            if (text.find("FEEDBACK-TOKEN") == std::string::npos) {
                ++feedbackCalls;
                return std::string("FEEDBACK-TOKEN: be specific");
            }
            for (int v = 1; v <= 3; ++v) {
                if (text.find(std::to_string(v) + " of 3") != std::string::npos) {
                    const auto child = filled("v" + std::to_string(v));
                    return "Revised:\n" + defs_json(child, dropOne && v == 2 ? 5 : kReasonCount).dump();
                }
            }
            return std::string("?");
        });
    };

    auto good = make(false);
    const auto x = expand_node(state, errors, good, 3);
    REQUIRE(x.children.size() == 3);
    CHECK(x.discarded.empty());
    CHECK(feedbackCalls.load() == 1);
    std::set<std::string> states;
    for (const auto& c : x.children) {
        states.insert(to_json(c.state).dump());
        CHECK(c.feedback == "FEEDBACK-TOKEN: be specific");
    }
    CHECK(states.size() == 3);

    auto partial = make(true);
    const auto y = expand_node(state, errors, partial, 3);
    CHECK(y.children.size() == 2);
    REQUIRE(y.discarded.size() == 1);
    CHECK(y.discarded[0].find("refinement 2") != std::string::npos);

    feedbackCalls = 0;
    CHECK(expand_node(state, {}, good, 3).children.empty());
    CHECK(feedbackCalls.load() == 0);
}

TEST_CASE("search on a two-level mock tree") {
    MockTree t;
    t.nodes = {{0.2, 0, {1, 2, 3}}, {0.3, 1, {}}, {0.9, 1, {}}, {0.5, 1, {}}};
    MockTreeSearch mock(t);
    MctsConfig cfg;
    cfg.iterations = 12;
    const auto r = mcts_optimize(t.state(0), mock, mock, cfg);
    CHECK(t.id_of(r.best) == 2);
    CHECK(r.bestReward == 0.9);
    CHECK(r.seedReward == 0.2);
    CHECK(r.trajectory.size() == 2);
    CHECK(r.trajectory.front() == 0);
    // Leaves have no errors, so they become terminal when revisited.
    for (auto id : r.tree.nodes[0].children) {
        const auto& n = r.tree.nodes[id];
        CHECK(n.depth == 1);
        if (n.visits > 1) CHECK(n.terminal);
    }
    CHECK(mock.evaluations == 4);

    MctsConfig one;
    one.iterations = 1;
    MockTreeSearch fresh(t);
    const auto single = mcts_optimize(t.state(0), fresh, fresh, one);
    CHECK(single.best == t.state(0));
    CHECK(single.tree.nodes.size() == 1);
}

TEST_CASE("zero errors make a terminal node") {
    MockTree t;
    t.nodes = {{1.0, 0, {}}};
    MockTreeSearch mock(t);
    MctsConfig cfg;
    cfg.iterations = 5;
    const auto r = mcts_optimize(t.state(0), mock, mock, cfg);
    CHECK(r.tree.nodes[0].terminal);
    CHECK(r.tree.nodes[0].visits == 5);
    CHECK(mock.expansions == 0);
    CHECK(mock.evaluations == 1);
}

TEST_CASE("search invariants on random mock trees") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto t = random_mock_tree(3, 3, seed);
        MockTreeSearch mock(t);
        MctsConfig cfg;
        cfg.iterations = 20 * t.nodes.size();
        cfg.seed = seed;
        std::size_t lastRootVisits = 0;
        const auto r = mcts_optimize(t.state(0), mock, mock, cfg, [&](const SearchTree& tree, std::size_t it) {
            CHECK(tree.nodes[0].visits == it);
            CHECK(tree.nodes[0].visits == lastRootVisits + 1);
            lastRootVisits = tree.nodes[0].visits;
            for (const auto& n : tree.nodes) {
                std::size_t childVisits = 0;
                for (auto c : n.children) {
                    childVisits += tree.nodes[c].visits;
                    CHECK(tree.nodes[c].depth == n.depth + 1);
                    CHECK(tree.nodes[c].parent == n.id);
                }
                CHECK(childVisits <= n.visits);
                CHECK(n.mean_reward() >= 0.0);
                CHECK(n.mean_reward() <= 1.0);
            }
        });
        CHECK(t.id_of(r.best) == t.best());
        CHECK(r.bestReward >= r.seedReward);
    }
}

TEST_CASE("greedy search with zero exploration") {
    const auto t = random_mock_tree(3, 3, 77);
    MockTreeSearch mock(t);
    MctsConfig cfg;
    cfg.iterations = 30;
    cfg.explorationC = 0.0;
    SearchTree prev;
    std::size_t steps = 0;
    mcts_optimize(t.state(0), mock, mock, cfg, [&](const SearchTree& tree, std::size_t) {
        // The path taken this iteration is the set of nodes whose visit count grew.
        auto before = [&](std::size_t i) -> const SearchNode* { return i < prev.nodes.size() ? &prev.nodes[i] : nullptr; };
        std::size_t cur = 0;
        while (true) {
            std::optional<std::size_t> next;
            for (auto c : tree.nodes[cur].children) {
                const auto* b = before(c);
                if (tree.nodes[c].visits > (b ? b->visits : 0)) next = c;
            }
            if (!next) break;
            bool anyUnvisited = false;
            double best = -1.0;
            for (auto k : tree.nodes[cur].children) {
                const auto* b = before(k);
                if (!b || b->visits == 0) anyUnvisited = true;
                else best = std::max(best, b->mean_reward());
            }
            if (!anyUnvisited) {
                CHECK(before(*next)->mean_reward() == best);
                ++steps;
            }
            cur = *next;
        }
        prev = tree;
    });
    CHECK(steps > 0);
}

TEST_CASE("uct value and config") {
    SearchNode n;
    n.visits = 4;
    n.totalReward = 2.0;
    CHECK(uct_value(n, 16, 0.0) == 0.5);
    CHECK(uct_value(n, 16, 1.0) == doctest::Approx(0.5 + std::sqrt(std::log(16.0) / 4)));
    MctsConfig c;
    c.iterations = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = {};
    c.explorationC = -1;
    CHECK_THROWS_AS(c.validate(), UsageError);
}

}
