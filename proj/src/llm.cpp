#include "notehelp/llm.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "notehelp/hash.hpp"

namespace notehelp {

using nlohmann::json;

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

// ---- templates ------------------------------------------------------------

std::vector<std::string> placeholders_in(std::string_view text) {
    std::vector<std::string> out;
    for (std::size_t pos = text.find("${"); pos != std::string_view::npos; pos = text.find("${", pos + 2)) {
        const auto close = text.find('}', pos + 2);
        if (close == std::string_view::npos) break;
        std::string name(text.substr(pos + 2, close - pos - 2));
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
    }
    return out;
}

std::string render_text(std::string_view text, const Bindings& bindings) {
    std::string missing;
    for (const auto& name : placeholders_in(text)) {
        if (!bindings.contains(name)) missing += (missing.empty() ? "" : ", ") + ("${" + name + "}");
    }
    if (!missing.empty()) throw Error("unbound placeholders: " + missing);

    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (true) {
        const auto open = text.find("${", pos);
        const auto close = open == std::string_view::npos ? open : text.find('}', open + 2);
        if (close == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        out.append(text.substr(pos, open - pos));
        out.append(bindings.find(text.substr(open + 2, close - open - 2))->second);
        pos = close + 1;
    }
    return out;
}

std::string render_prompt(const PromptTemplate& t, const Bindings& bindings) { return render_text(t.text, bindings); }

// ---- definitions ----------------------------------------------------------

std::vector<std::string> DefinitionSet::missing() const {
    std::vector<std::string> out;
    for (auto t : all_reason_tags()) {
        if (trim((*this)[t]).empty()) out.emplace_back(wire_name(t));
    }
    return out;
}

void DefinitionSet::validate() const {
    const auto m = missing();
    if (m.empty()) return;
    std::string names;
    for (const auto& n : m) names += (names.empty() ? "" : ", ") + n;
    throw Error("definition set is missing " + names);
}

json to_json(const DefinitionSet& d) {
    json j = json::object();
    for (auto t : all_reason_tags()) j[std::string(wire_name(t))] = d[t];
    return j;
}

DefinitionSet definitions_from_json(const json& j) {
    if (!j.is_object()) throw Error("definitions must be a JSON object");
    DefinitionSet d;
    std::optional<std::string> aliasOpinion;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_string()) throw Error("definition for '" + key + "' is not a string");
        if (auto raw = classify_raw_tag(key); raw && raw->kind == RawTagKind::Other) continue;
        if (lower(key) == "nothelpfulopinionspeculation") {
            aliasOpinion = value.get<std::string>();
            continue;
        }
        auto tag = tag_from_loose(key);
        if (!tag) throw Error("unknown reason '" + key + "' in definitions");
        d[*tag] = value.get<std::string>();
    }
    if (aliasOpinion && d[ReasonTag::OpinionSpeculationOrBias].empty()) d[ReasonTag::OpinionSpeculationOrBias] = *aliasOpinion;
    d.validate();
    return d;
}

DefinitionSet load_definitions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    try {
        return definitions_from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

void write_definitions(const std::filesystem::path& path, const DefinitionSet& d) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << to_json(d).dump(2) << '\n';
}

std::string format_definitions(const DefinitionSet& d) {
    std::string out;
    for (auto t : all_reason_tags()) {
        if (!out.empty()) out += '\n';
        out += wire_name(t);
        out += ": ";
        out += d[t];
    }
    return out;
}

// ---- requests -------------------------------------------------------------

void ChatRequest::validate() const {
    if (messages.empty()) throw UsageError("chat request needs at least one message");
    if (!(temperature >= 0.0)) throw UsageError("chat request temperature must be >= 0");
    if (maxTokens <= 0) throw UsageError("chat request maxTokens must be positive");
    for (const auto& m : messages) {
        if (m.role != "system" && m.role != "user") throw UsageError("chat message role must be system or user");
    }
}

json to_json(const ChatRequest& r) {
    json messages = json::array();
    for (const auto& m : r.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    return json{{"model", r.model}, {"messages", messages}, {"temperature", r.temperature}, {"max_tokens", r.maxTokens}};
}

ChatRequest chat_request_from_json(const json& j) {
    ChatRequest r;
    r.model = j.at("model").get<std::string>();
    for (const auto& m : j.at("messages")) r.messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
    r.temperature = j.value("temperature", 0.0);
    r.maxTokens = j.value("max_tokens", r.maxTokens);
    return r;
}

std::string request_key(const ChatRequest& r) { return sha256_hex(to_json(r).dump()); }

ChatRequest user_request(std::string prompt, std::string model, int maxTokens) {
    ChatRequest r;
    r.model = std::move(model);
    r.maxTokens = maxTokens;
    r.messages.push_back({"user", std::move(prompt)});
    return r;
}

// ---- HTTP -----------------------------------------------------------------

std::string parse_chat_response(std::string_view body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw Error(std::string("malformed response envelope: ") + e.what());
    }
    if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
        throw Error("malformed response envelope: no choices");
    }
    const auto& choice = j["choices"][0];
    if (!choice.contains("message") || !choice["message"].contains("content") || !choice["message"]["content"].is_string()) {
        throw Error("malformed response envelope: no message content");
    }
    return choice["message"]["content"].get<std::string>();
}

HttpChatBackend::HttpChatBackend(HttpOptions options) : options_(std::move(options)) {
    const auto& url = options_.endpoint;
    const auto scheme = url.find("://");
    if (url.empty() || scheme == std::string::npos) throw UsageError("chat endpoint must be an http(s) URL, got '" + url + "'");
    const auto slash = url.find('/', scheme + 3);
    base_ = url.substr(0, slash);
    path_ = slash == std::string::npos ? "/v1/chat/completions" : url.substr(slash);
    if (options_.maxAttempts < 1) throw UsageError("maxAttempts must be >= 1");
    if (!options_.sleep) options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string HttpChatBackend::complete(const ChatRequest& request) { return complete_with_log(request).content; }

ChatResult HttpChatBackend::complete_with_log(const ChatRequest& request) {
    request.validate();
    const std::string body = to_json(request).dump();
    ChatResult result;
    auto backoff = options_.initialBackoff;
    for (int attempt = 1; attempt <= options_.maxAttempts; ++attempt) {
        httplib::Client cli(base_);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(request.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(request.timeout - secs);
        cli.set_connection_timeout(secs.count(), usecs.count());
        cli.set_read_timeout(secs.count(), usecs.count());
        cli.set_write_timeout(secs.count(), usecs.count());
        httplib::Headers headers;
        if (!options_.apiKey.empty()) headers.emplace("Authorization", "Bearer " + options_.apiKey);

        AttemptRecord rec;
        rec.attempt = attempt;
        bool retryable = false;
        auto res = cli.Post(path_, headers, body, "application/json");
        if (!res) {
            rec.error = httplib::to_string(res.error());
            retryable = true;
        } else {
            rec.httpStatus = res->status;
            if (res->status == 200) {
                try {
                    result.content = parse_chat_response(res->body);
                } catch (const Error& e) {
                    rec.error = e.what();
                    result.attempts.push_back(rec);
                    throw ChatError(rec.error, result.attempts);
                }
                result.attempts.push_back(rec);
                return result;
            }
            rec.error = "HTTP " + std::to_string(res->status);
            retryable = res->status == 429 || res->status >= 500;
        }
        if (retryable && attempt < options_.maxAttempts) rec.backoff = backoff;
        result.attempts.push_back(rec);
        if (!retryable) break;
        if (attempt < options_.maxAttempts) {
            options_.sleep(backoff);
            backoff *= 2;
        }
    }
    std::string log;
    for (const auto& a : result.attempts) log += "; attempt " + std::to_string(a.attempt) + ": " + a.error;
    throw ChatError("chat request failed after " + std::to_string(result.attempts.size()) + " attempt(s)" + log,
                    result.attempts);
}

// ---- replay / record ------------------------------------------------------

std::vector<RecordedExchange> load_recording(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read recording " + path.string());
    std::vector<RecordedExchange> out;
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (trim(line).empty()) continue;
        try {
            const auto j = json::parse(line);
            RecordedExchange ex;
            ex.request = chat_request_from_json(j.at("request"));
            ex.key = request_key(ex.request);
            ex.response = j.at("response").get<std::string>();
            if (j.contains("key") && j["key"].get<std::string>() != ex.key) {
                throw Error("key does not match request content");
            }
            out.push_back(std::move(ex));
        } catch (const std::exception& e) {
            throw Error(path.string() + ":" + std::to_string(lineNo) + ": " + e.what());
        }
    }
    return out;
}

ReplayBackend::ReplayBackend(const std::filesystem::path& path) : ReplayBackend(load_recording(path)) {}

ReplayBackend::ReplayBackend(std::vector<RecordedExchange> exchanges) {
    for (auto& ex : exchanges) responses_.emplace(ex.key, std::move(ex.response));
}

std::string ReplayBackend::complete(const ChatRequest& request) {
    const auto key = request_key(request);
    auto it = responses_.find(key);
    if (it == responses_.end()) throw Error("no recorded response for request " + key.substr(0, 16));
    return it->second;
}

RecordingBackend::RecordingBackend(ChatBackend& inner, const std::filesystem::path& path) : inner_(inner), path_(path) {
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write recording " + path_.string());
}

std::string RecordingBackend::complete(const ChatRequest& request) {
    auto response = inner_.complete(request);
    const auto key = request_key(request);
    std::lock_guard lock(mu_);
    if (written_.emplace(key, true).second) {
        std::ofstream out(path_, std::ios::binary | std::ios::app);
        out << json{{"key", key}, {"request", to_json(request)}, {"response", response}}.dump() << '\n';
        if (!out) throw Error("cannot append to recording " + path_.string());
    }
    return response;
}

BackendStack::BackendStack(const BackendOptions& options) {
    if (options.replay) {
        base_ = std::make_unique<ReplayBackend>(*options.replay);
    } else {
        if (options.offline) throw UsageError("--offline requires --replay PATH");
        auto env = [](const char* a, const char* b) -> std::string {
            if (const char* v = std::getenv(a); v && *v) return v;
            if (const char* v = std::getenv(b); v && *v) return v;
            return {};
        };
        HttpOptions http;
        http.endpoint = options.endpoint.empty() ? env("CNRANK_ENDPOINT", "NOTEHELP_ENDPOINT") : options.endpoint;
        http.apiKey = env("CNRANK_API_KEY", "NOTEHELP_API_KEY");
        if (http.endpoint.empty()) throw UsageError("no chat endpoint: set CNRANK_ENDPOINT or pass --replay PATH");
        base_ = std::make_unique<HttpChatBackend>(std::move(http));
    }
    top_ = base_.get();
    if (options.record) {
        recorder_ = std::make_unique<RecordingBackend>(*base_, *options.record);
        top_ = recorder_.get();
    }
}

// ---- prediction parsing ---------------------------------------------------

ReasonSet PredictionOutput::known_reasons() const {
    ReasonSet s;
    for (const auto& r : reasons) {
        if (r.tag) s.set(index_of(*r.tag));
    }
    return s;
}

std::size_t PredictionOutput::unknown_count() const {
    return static_cast<std::size_t>(std::count_if(reasons.begin(), reasons.end(), [](const auto& r) { return r.unknown(); }));
}

std::optional<std::string_view> find_json_object(std::string_view text) {
    for (std::size_t start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
        int depth = 0;
        bool inString = false, escaped = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            const char c = text[i];
            if (inString) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    inString = false;
                }
                continue;
            }
            if (c == '"') {
                inString = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                if (--depth == 0) return text.substr(start, i - start + 1);
            }
        }
    }
    return std::nullopt;
}

namespace {

std::optional<Helpfulness> helpfulness_from(std::string_view value) {
    std::string v = lower(trim(value));
    std::replace(v.begin(), v.end(), '-', '_');
    std::replace(v.begin(), v.end(), ' ', '_');
    if (v == "helpful") return Helpfulness::Helpful;
    if (v == "non_helpful" || v == "not_helpful" || v == "nonhelpful" || v == "unhelpful" || v == "nothelpful") {
        return Helpfulness::NotHelpful;
    }
    return std::nullopt;
}

std::vector<std::string> split_reasons(std::string_view s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const auto semi = s.find(';', pos);
        auto piece = trim(s.substr(pos, semi == std::string_view::npos ? std::string_view::npos : semi - pos));
        while (!piece.empty() && (piece.front() == '"' || piece.front() == '\'')) piece.remove_prefix(1);
        while (!piece.empty() && (piece.back() == '"' || piece.back() == '\'')) piece.remove_suffix(1);
        piece = trim(piece);
        if (!piece.empty()) out.emplace_back(piece);
        if (semi == std::string_view::npos) break;
        pos = semi + 1;
    }
    return out;
}

// Case-insensitive search for a quoted key; returns the position after its colon.
std::optional<std::size_t> find_key(std::string_view obj, std::string_view key) {
    const auto lo = lower(obj);
    const auto needle = "\"" + lower(key) + "\"";
    for (auto pos = lo.find(needle); pos != std::string::npos; pos = lo.find(needle, pos + 1)) {
        auto after = pos + needle.size();
        while (after < lo.size() && std::isspace(static_cast<unsigned char>(lo[after]))) ++after;
        if (after < lo.size() && lo[after] == ':') return after + 1;
    }
    return std::nullopt;
}

// Value text after a key: a quoted string, a [...] list, or a bare word.
std::string lenient_value(std::string_view obj, std::size_t pos) {
    while (pos < obj.size() && std::isspace(static_cast<unsigned char>(obj[pos]))) ++pos;
    if (pos >= obj.size()) return {};
    if (obj[pos] == '"') {
        const auto end = obj.find('"', pos + 1);
        return std::string(obj.substr(pos + 1, end == std::string_view::npos ? std::string_view::npos : end - pos - 1));
    }
    if (obj[pos] == '[') {
        const auto end = obj.find(']', pos + 1);
        std::string inner(obj.substr(pos + 1, end == std::string_view::npos ? std::string_view::npos : end - pos - 1));
        std::replace(inner.begin(), inner.end(), ',', ';');
        return inner;
    }
    std::size_t end = pos;
    while (end < obj.size() && obj[end] != ',' && obj[end] != '}' && obj[end] != '\n') ++end;
    return std::string(trim(obj.substr(pos, end - pos)));
}

PredictedReason to_predicted(std::string name) {
    PredictedReason r;
    r.tag = tag_from_loose(name);
    r.name = std::move(name);
    return r;
}

}  // namespace

PredictionOutput parse_prediction(std::string_view raw) {
    auto obj = find_json_object(raw);
    if (!obj) throw ParseError("no JSON object found");
    // Prose may contain stray braces; prefer the first object that names the answer key.
    for (auto rest = raw; !find_key(*obj, "helpfulness");) {
        rest = rest.substr(static_cast<std::size_t>(obj->data() - rest.data()) + 1);
        auto next = find_json_object(rest);
        if (!next) {
            obj = find_json_object(raw);
            break;
        }
        obj = next;
    }
    PredictionOutput out;
    out.raw = std::string(raw);

    std::optional<std::string> helpText;
    std::vector<std::string> reasonNames;
    bool haveReasons = false;

    json j = json::parse(*obj, nullptr, false);
    if (!j.is_discarded() && j.is_object()) {
        for (const auto& [key, value] : j.items()) {
            const auto k = lower(key);
            if (k == "helpfulness" && value.is_string()) helpText = value.get<std::string>();
            if (k == "reasons") {
                if (value.is_string()) {
                    reasonNames = split_reasons(value.get<std::string>());
                    haveReasons = true;
                } else if (value.is_array()) {
                    for (const auto& v : value) {
                        if (v.is_string()) {
                            for (auto& n : split_reasons(v.get<std::string>())) reasonNames.push_back(std::move(n));
                        }
                    }
                    haveReasons = true;
                }
            }
        }
    }
    if (!helpText) {
        if (auto pos = find_key(*obj, "helpfulness")) helpText = lenient_value(*obj, *pos);
    }
    if (!haveReasons) {
        if (auto pos = find_key(*obj, "reasons")) {
            reasonNames = split_reasons(lenient_value(*obj, *pos));
            haveReasons = true;
        }
    }
    if (!helpText) throw ParseError("missing key \"helpfulness\"");
    if (!haveReasons) throw ParseError("missing key \"reasons\"");
    auto h = helpfulness_from(*helpText);
    if (!h) throw ParseError("unrecognized helpfulness value '" + *helpText + "'");
    out.helpfulness = *h;
    for (auto& n : reasonNames) out.reasons.push_back(to_predicted(std::move(n)));
    return out;
}

std::string_view to_string(FcLabel v) {
    switch (v) {
        case FcLabel::Supports: return "SUPPORTS";
        case FcLabel::Refutes: return "REFUTES";
        case FcLabel::NotEnoughInfo: return "NOT_ENOUGH_INFO";
        case FcLabel::Disputed: return "DISPUTED";
    }
    return "NOT_ENOUGH_INFO";
}

std::optional<FcLabel> fc_label_from_string(std::string_view s) {
    std::string v(trim(s));
    for (auto& c : v) c = c == ' ' || c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (v == "SUPPORTS") return FcLabel::Supports;
    if (v == "REFUTES") return FcLabel::Refutes;
    if (v == "NOT_ENOUGH_INFO") return FcLabel::NotEnoughInfo;
    if (v == "DISPUTED") return FcLabel::Disputed;
    return std::nullopt;
}

FcVerdict parse_fc_verdict(std::string_view raw) {
    const auto lo = lower(raw);
    static constexpr std::string_view marker = "classification:";
    for (auto pos = lo.find(marker); pos != std::string::npos; pos = lo.find(marker, pos + 1)) {
        std::size_t i = pos + marker.size();
        auto skip = [&] {
            while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t' || raw[i] == '[' || raw[i] == '*' ||
                                      raw[i] == '"' || raw[i] == '\'')) {
                ++i;
            }
        };
        skip();
        std::size_t end = i;
        while (end < raw.size() && (std::isalpha(static_cast<unsigned char>(raw[end])) || raw[end] == '_' ||
                                    (raw[end] == ' ' && end + 1 < raw.size() && std::isalpha(static_cast<unsigned char>(raw[end + 1]))))) {
            ++end;
        }
        // Longest prefix of the word run that names a label ("NOT ENOUGH INFO because" -> NOT_ENOUGH_INFO).
        std::optional<FcLabel> label;
        std::size_t labelEnd = end;
        for (std::size_t cut = end; cut > i; --cut) {
            if (cut != end && raw[cut] != ' ') continue;
            if ((label = fc_label_from_string(raw.substr(i, cut - i)))) {
                labelEnd = cut;
                break;
            }
        }
        if (!label) continue;

        FcVerdict v;
        v.label = *label;
        std::size_t lineEnd = raw.find('\n', labelEnd);
        auto rest = raw.substr(labelEnd, lineEnd == std::string_view::npos ? std::string_view::npos : lineEnd - labelEnd);
        while (!rest.empty() && (rest.front() == ']' || rest.front() == '*' || rest.front() == '"' || rest.front() == '\'' ||
                                 rest.front() == '.' || rest.front() == ',' || rest.front() == '-' || rest.front() == ':' ||
                                 std::isspace(static_cast<unsigned char>(rest.front())))) {
            rest.remove_prefix(1);
        }
        v.reason = std::string(trim(rest));
        if (v.reason.empty()) {
            static constexpr std::string_view reasonMarker = "brief reason:";
            if (auto rp = lo.find(reasonMarker, labelEnd); rp != std::string::npos) {
                auto after = std::string_view(raw).substr(rp + reasonMarker.size());
                after = trim(after);
                v.reason = std::string(trim(after.substr(0, after.find('\n'))));
            }
        }
        return v;
    }
    throw ParseError("no classification label found");
}

// ---- batch prediction -----------------------------------------------------

Bindings prediction_bindings(const DatasetExample& ex, const DefinitionSet* defs) {
    Bindings b{{"claim", ex.postText}, {"note", ex.noteText}};
    if (defs) b["reason definitions"] = format_definitions(*defs);
    return b;
}

std::vector<PredictResult> predict_batch(std::span<const DatasetExample> examples, const PromptTemplate& tmpl,
                                         const DefinitionSet* defs, ChatBackend& backend, const PredictOptions& options) {
    if (options.maxInFlight < 1) throw UsageError("maxInFlight must be >= 1");
    const auto needsDefs = std::find(tmpl.placeholders.begin(), tmpl.placeholders.end(), "reason definitions") !=
                           tmpl.placeholders.end();
    if (needsDefs && !defs) throw UsageError(std::string(tmpl.id) + " requires reason definitions");

    std::vector<PredictResult> out(examples.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < examples.size(); i = next++) {
            auto& r = out[i];
            r.id = examples[i].noteId;
            try {
                const auto prompt = render_prompt(tmpl, prediction_bindings(examples[i], defs));
                const auto raw = backend.complete(user_request(prompt, options.model, options.maxTokens));
                r.output = parse_prediction(raw);
            } catch (const std::exception& e) {
                r.error = e.what();
            }
        }
    };
    const std::size_t workers = std::min(options.maxInFlight, examples.size());
    if (workers <= 1) {
        worker();
        return out;
    }
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    pool.clear();
    return out;
}

json to_json(const PredictResult& r) {
    json j{{"id", r.id}};
    if (r.output) {
        j["helpfulness"] = r.output->helpfulness == Helpfulness::Helpful ? "helpful" : "non_helpful";
        json reasons = json::array(), unknown = json::array();
        for (const auto& p : r.output->reasons) {
            if (p.tag) {
                reasons.push_back(wire_name(*p.tag));
            } else {
                unknown.push_back(p.name);
            }
        }
        j["reasons"] = reasons;
        j["unknown_reasons"] = unknown;
    } else {
        j["error"] = r.error;
    }
    return j;
}

}  // namespace notehelp
