#include <doctest.h>

#include <atomic>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "fixtures.hpp"
#include "notehelp/llm.hpp"
#include "notehelp/rng.hpp"

using namespace notehelp;
using namespace notehelp::testing;
using nlohmann::json;

namespace {

// Answers each POST with the next scripted status; 200 echoes the last user message.
class ScriptedServer {
public:
    explicit ScriptedServer(std::vector<int> statuses) : statuses_(statuses.begin(), statuses.end()) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            int status = 200;
            {
                std::lock_guard lock(mu_);
                ++hits_;
                if (!statuses_.empty()) {
                    status = statuses_.front();
                    statuses_.pop_front();
                }
                bodies_.push_back(req.body);
            }
            res.status = status;
            if (status != 200) {
                res.set_content(R"({"error":{"message":"busy"}})", "application/json");
                return;
            }
            const auto content = json::parse(req.body).at("messages").back().at("content");
            res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump(),
                            "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~ScriptedServer() {
        server_.stop();
        thread_.join();
    }

    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
    int hits() {
        std::lock_guard lock(mu_);
        return hits_;
    }
    std::string body(std::size_t i) {
        std::lock_guard lock(mu_);
        return bodies_.at(i);
    }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::mutex mu_;
    std::deque<int> statuses_;
    std::vector<std::string> bodies_;
    int hits_ = 0;
};

HttpOptions no_sleep(const std::string& endpoint, std::vector<std::chrono::milliseconds>* waits = nullptr) {
    HttpOptions o;
    o.endpoint = endpoint;
    o.initialBackoff = std::chrono::milliseconds(100);
    o.sleep = [waits](std::chrono::milliseconds d) {
        if (waits) waits->push_back(d);
    };
    return o;
}

DatasetExample example(std::string id, std::string claim, std::string note) {
    DatasetExample e;
    e.noteId = std::move(id);
    e.postText = std::move(claim);
    e.noteText = std::move(note);
    return e;
}

constexpr const char* kGood = R"({"helpfulness": "helpful","reasons":"helpfulClear;helpfulGoodSources"})";

}  // namespace

TEST_SUITE("llm") {

TEST_CASE("prompt templates") {
    const auto& original = prompt_template(TemplateName::Original);
    CHECK(original.text.find("Given a potentially misleading CLAIM and an associated NOTE") != std::string_view::npos);
    const auto text = render_prompt(original, {{"claim", "A"}, {"note", "B"}});
    CHECK(text.find("CLAIM: A") != std::string::npos);
    CHECK(text.find("NOTE: B") != std::string::npos);
    CHECK(text.find("${") == std::string::npos);

    const auto& gen = prompt_template(TemplateName::GenDef);
    Bindings b;
    for (const auto& p : gen.placeholders) b[p] = "x";
    b["helpful_label"] = "helpful";
    CHECK(render_prompt(gen, b).find("are helpful in explaining") != std::string::npos);

    try {
        render_prompt(original, {{"claim", "A"}});
        FAIL("expected an unbound placeholder error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("${note}") != std::string::npos);
    }

    // Bound text is not re-scanned.
    const auto literal = render_prompt(original, {{"claim", "${note}"}, {"note", "cost ${5}"}});
    CHECK(literal.find("CLAIM: ${note}") != std::string::npos);
    CHECK(literal.find("NOTE: cost ${5}") != std::string::npos);

    for (auto name : all_templates()) {
        const auto& t = prompt_template(name);
        CHECK(template_from_string(t.id) == name);
        CHECK(t.placeholders == placeholders_in(t.text));
        Bindings all;
        for (const auto& p : t.placeholders) all[p] = "v";
        CHECK(render_prompt(t, all).find("${") == std::string::npos);
    }
}

TEST_CASE("definition sets") {
    json j;
    for (auto t : all_reason_tags()) j[std::string(wire_name(t))] = "def of " + std::string(wire_name(t));
    const auto d = definitions_from_json(j);
    CHECK(d.missing().empty());
    CHECK(definitions_from_json(to_json(d)) == d);
    CHECK(format_definitions(d).find("helpfulClear: def of helpfulClear") != std::string::npos);

    auto partial = j;
    partial.erase("helpfulClear");
    CHECK_THROWS_AS(definitions_from_json(partial), Error);
    auto extra = j;
    extra["helpfulBanana"] = "?";
    CHECK_THROWS_AS(definitions_from_json(extra), Error);
    auto other = j;
    other["notHelpfulOther"] = "ignored";
    CHECK(definitions_from_json(other) == d);
}

TEST_CASE("chat requests") {
    auto r = user_request("hello");
    CHECK(r.temperature == 0.0);
    const auto wire = to_json(r);
    CHECK(wire.at("messages").at(0).at("role") == "user");
    CHECK(wire.contains("max_tokens"));
    CHECK(request_key(chat_request_from_json(wire)) == request_key(r));
    auto other = r;
    other.messages[0].content = "hello!";
    CHECK(request_key(other) != request_key(r));

    r.messages.clear();
    CHECK_THROWS_AS(r.validate(), Error);
    r = user_request("x");
    r.temperature = -1;
    CHECK_THROWS_AS(r.validate(), Error);
}

TEST_CASE("http backend") {
    SUBCASE("echo") {
        ScriptedServer server({});
        HttpChatBackend backend(no_sleep(server.endpoint()));
        CHECK(backend.complete(user_request("X")) == "X");
        const auto body = json::parse(server.body(0));
        CHECK(body.at("temperature") == 0.0);
        CHECK(body.at("model") == "gpt-4o");
    }
    SUBCASE("429 then 200") {
        ScriptedServer server({429});
        std::vector<std::chrono::milliseconds> waits;
        HttpChatBackend backend(no_sleep(server.endpoint(), &waits));
        const auto result = backend.complete_with_log(user_request("X"));
        CHECK(result.content == "X");
        REQUIRE(result.attempts.size() == 2);
        CHECK(result.attempts[0].httpStatus == 429);
        CHECK(result.attempts[1].httpStatus == 200);
        CHECK(server.hits() == 2);
        CHECK(waits == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(100)});
    }
    SUBCASE("three 500s") {
        ScriptedServer server({500, 502, 503});
        std::vector<std::chrono::milliseconds> waits;
        HttpChatBackend backend(no_sleep(server.endpoint(), &waits));
        try {
            backend.complete(user_request("X"));
            FAIL("expected retries to run out");
        } catch (const ChatError& e) {
            REQUIRE(e.attempts().size() == 3);
            CHECK(e.attempts()[2].httpStatus == 503);
        }
        CHECK(server.hits() == 3);
        CHECK(waits == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(100), std::chrono::milliseconds(200)});
    }
    SUBCASE("client errors are not retried") {
        ScriptedServer server({400});
        HttpChatBackend backend(no_sleep(server.endpoint()));
        CHECK_THROWS_AS(backend.complete(user_request("X")), ChatError);
        CHECK(server.hits() == 1);
    }
    SUBCASE("nothing listening") {
        int port;
        {
            ScriptedServer gone({});
            port = std::stoi(gone.endpoint().substr(17));
        }
        HttpChatBackend backend(no_sleep("http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions"));
        CHECK_THROWS_AS(backend.complete(user_request("X")), ChatError);
    }
    CHECK(parse_chat_response(R"({"choices":[{"message":{"content":"hi"}}]})") == "hi");
    CHECK_THROWS_AS(parse_chat_response(R"({"choices":[]})"), Error);
    CHECK_THROWS_AS(parse_chat_response("<html>"), Error);
}

TEST_CASE("record and replay") {
    const auto dir = scratch_dir("llm_replay");
    int calls = 0;
    FunctionBackend live([&](const ChatRequest& r) {
        ++calls;
        return "re: " + r.messages.back().content;
    });
    {
        RecordingBackend rec(live, dir / "rec.jsonl");
        CHECK(rec.complete(user_request("a")) == "re: a");
        CHECK(rec.complete(user_request("b")) == "re: b");
        CHECK(rec.complete(user_request("a")) == "re: a");
    }
    CHECK(calls == 3);
    const auto exchanges = load_recording(dir / "rec.jsonl");
    CHECK(exchanges.size() == 2);

    ReplayBackend replay(dir / "rec.jsonl");
    CHECK(replay.size() == 2);
    CHECK(replay.complete(user_request("b")) == "re: b");
    CHECK_THROWS_AS(replay.complete(user_request("c")), Error);

    BackendOptions offline;
    offline.offline = true;
    CHECK_THROWS_AS(BackendStack{offline}, UsageError);
    offline.replay = dir / "rec.jsonl";
    BackendStack stack(offline);
    CHECK(stack.backend().complete(user_request("a")) == "re: a");
}

TEST_CASE("parse prediction") {
    const auto p = parse_prediction(kGood);
    CHECK(p.helpfulness == Helpfulness::Helpful);
    REQUIRE(p.reasons.size() == 2);
    CHECK(p.reasons[0].tag == ReasonTag::Clear);
    CHECK(p.reasons[1].tag == ReasonTag::GoodSources);
    CHECK(p.raw == kGood);

    const auto prose = parse_prediction(std::string("Sure, here is the answer {maybe}\n") +
                                        R"(```json {"helpfulness":"NON_HELPFUL","reasons":" notHelpfulIncorrect ; NOTHELPFULSPAMHARASSMENTORABUSE "}```)");
    CHECK(prose.helpfulness == Helpfulness::NotHelpful);
    REQUIRE(prose.reasons.size() == 2);
    CHECK(prose.reasons[0].tag == ReasonTag::Incorrect);
    CHECK(prose.reasons[1].tag == ReasonTag::SpamHarassmentOrAbuse);

    const auto unknown = parse_prediction(R"({"helpfulness":"helpful","reasons":"helpfulClear;helpfulVibes"})");
    CHECK(unknown.unknown_count() == 1);
    CHECK(unknown.reasons[1].name == "helpfulVibes");
    CHECK(unknown.known_reasons().count() == 1);

    const auto arr = parse_prediction(R"({"helpfulness":"helpful","reasons":["helpfulClear","helpfulEmpathetic"]})");
    CHECK(arr.reasons.size() == 2);

    CHECK_THROWS_AS(parse_prediction("no json here"), ParseError);
    CHECK_THROWS_AS(parse_prediction(R"({"reasons":"helpfulClear"})"), ParseError);
    CHECK_THROWS_AS(parse_prediction(R"({"helpfulness":"maybe","reasons":"helpfulClear"})"), ParseError);

    CHECK(find_json_object(R"(x {"a":"}"} y)") == std::string_view(R"({"a":"}"})"));
    CHECK_FALSE(find_json_object("{ unterminated").has_value());
}

TEST_CASE("parse prediction fuzz") {
    Rng rng(99);
    const std::string alphabet = "{}[]\":;,\\ helpfulnon_reasonsClear\n\x01\xff";
    std::size_t parsed = 0;
    for (int i = 0; i < 20000; ++i) {
        std::string s;
        const auto n = rng.index(64);
        for (std::size_t k = 0; k < n; ++k) {
            s += rng.index(4) == 0 ? static_cast<char>(rng.index(256)) : alphabet[rng.index(alphabet.size())];
        }
        if (rng.index(8) == 0) s += kGood;
        try {
            const auto p = parse_prediction(s);
            ++parsed;
            for (const auto& r : p.reasons) CHECK((r.unknown() || index_of(*r.tag) < kReasonCount));
        } catch (const ParseError&) {
        }
    }
    CHECK(parsed > 0);
}

TEST_CASE("fact-check verdicts") {
    auto v = parse_fc_verdict("Classification: SUPPORTS\nBrief reason: matches record");
    CHECK(v.label == FcLabel::Supports);
    CHECK(v.reason == "matches record");
    CHECK(parse_fc_verdict("classification: refutes").label == FcLabel::Refutes);
    CHECK(parse_fc_verdict("Classification: [NOT ENOUGH INFO] nothing to go on").label == FcLabel::NotEnoughInfo);
    CHECK(parse_fc_verdict("**Classification:** disputed").label == FcLabel::Disputed);
    CHECK_THROWS_AS(parse_fc_verdict("I refuse"), ParseError);
    CHECK_THROWS_AS(parse_fc_verdict("Classification: banana"), ParseError);
    for (auto l : {FcLabel::Supports, FcLabel::Refutes, FcLabel::NotEnoughInfo, FcLabel::Disputed}) {
        CHECK(fc_label_from_string(to_string(l)) == l);
    }
}

TEST_CASE("predict batch") {
    std::vector<DatasetExample> examples;
    for (int i = 0; i < 5; ++i) examples.push_back(example("n" + std::to_string(i), "claim " + std::to_string(i), "note"));
    const auto& tmpl = prompt_template(TemplateName::Original);

    SUBCASE("order and failures") {
        FunctionBackend backend([](const ChatRequest& r) -> std::string {
            const auto& text = r.messages.back().content;
            if (text.find("claim 3") != std::string::npos) return "garbage";
            if (text.find("claim 1") != std::string::npos) throw ChatError("down", {});
            return kGood;
        });
        const auto results = predict_batch(examples, tmpl, nullptr, backend);
        REQUIRE(results.size() == 5);
        for (std::size_t i = 0; i < 5; ++i) CHECK(results[i].id == examples[i].noteId);
        CHECK(results[0].output.has_value());
        CHECK_FALSE(results[1].output.has_value());
        CHECK(results[1].error.find("down") != std::string::npos);
        CHECK_FALSE(results[3].output.has_value());
        CHECK(results[4].output.has_value());
    }
    SUBCASE("in-flight limit") {
        std::atomic<int> current{0}, peak{0};
        FunctionBackend backend([&](const ChatRequest&) {
            const int now = ++current;
            int seen = peak.load();
            while (now > seen && !peak.compare_exchange_weak(seen, now)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
            --current;
            return std::string(kGood);
        });
        std::vector<DatasetExample> many;
        for (int i = 0; i < 24; ++i) many.push_back(example("m" + std::to_string(i), "c", "n"));
        PredictOptions opts;
        opts.maxInFlight = 2;
        const auto results = predict_batch(many, tmpl, nullptr, backend, opts);
        CHECK(results.size() == many.size());
        CHECK(peak.load() <= 2);
        CHECK(peak.load() >= 1);
        opts.maxInFlight = 0;
        CHECK_THROWS_AS(predict_batch(many, tmpl, nullptr, backend, opts), Error);
    }
    SUBCASE("definitions are bound") {
        DefinitionSet defs;
        for (auto t : all_reason_tags()) defs[t] = "means " + std::string(wire_name(t));
        std::string seen;
        FunctionBackend backend([&](const ChatRequest& r) {
            seen = r.messages.back().content;
            return std::string(kGood);
        });
        predict_batch(std::span(examples).first(1), prompt_template(TemplateName::SeedDef), &defs, backend);
        CHECK(seen.find("helpfulClear: means helpfulClear") != std::string::npos);
        CHECK(seen.find("claim 0") != std::string::npos);
    }
}

}
