#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "notehelp/error.hpp"
#include "notehelp/ingest.hpp"
#include "notehelp/reason_tag.hpp"

namespace notehelp {

// ---- templates ------------------------------------------------------------

enum class TemplateName : std::uint8_t {
    Original,
    SeedDef,
    Optimized,
    GenDef,
    FcDirect,
    FcHelpful,
    Feedback,  // feedback agent for definition search (not from the appendix)
    Refine,    // refiner agent for definition search (not from the appendix)
};

struct PromptTemplate {
    TemplateName name;
    std::string_view id;  // ORIGINAL, SEED_DEF, ...
    std::string_view text;
    std::vector<std::string> placeholders;  // declared names, without ${}
};

const PromptTemplate& prompt_template(TemplateName name);
std::optional<TemplateName> template_from_string(std::string_view id);
std::span<const TemplateName> all_templates();

// Names of the ${...} placeholders appearing in `text`, in order of first use.
std::vector<std::string> placeholders_in(std::string_view text);

using Bindings = std::map<std::string, std::string, std::less<>>;

/// Literal single-pass substitution; bound text is never re-scanned, so user
/// content containing "${" survives untouched. Throws naming every unbound
/// placeholder, e.g. "unbound placeholders: ${note}".
std::string render_prompt(const PromptTemplate& t, const Bindings& bindings);
std::string render_text(std::string_view text, const Bindings& bindings);

// ---- definitions ----------------------------------------------------------

/// One definition per canonical reason tag.
struct DefinitionSet {
    std::array<std::string, kReasonCount> text;

    const std::string& operator[](ReasonTag t) const { return text[index_of(t)]; }
    std::string& operator[](ReasonTag t) { return text[index_of(t)]; }
    bool operator==(const DefinitionSet&) const = default;

    // Names of missing (empty) tags; empty when the set is complete.
    std::vector<std::string> missing() const;
    void validate() const;
};

nlohmann::json to_json(const DefinitionSet& d);

/// Accepts an object keyed by tag name (case-insensitive, bare names allowed).
/// "Other" tags are ignored; the merged opinion alias is used only when the
/// canonical key is absent. Unknown keys and missing tags are errors.
DefinitionSet definitions_from_json(const nlohmann::json& j);
DefinitionSet load_definitions(const std::filesystem::path& path);
void write_definitions(const std::filesystem::path& path, const DefinitionSet& d);

// "wireName: definition" lines in canonical order, as bound to ${reason definitions}.
std::string format_definitions(const DefinitionSet& d);

// ---- chat backends --------------------------------------------------------

struct ChatMessage {
    std::string role;  // system | user
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
    std::string model = "gpt-4o";
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int maxTokens = 512;
    std::chrono::milliseconds timeout{60000};

    void validate() const;
};

// Wire body {model, messages, temperature, max_tokens}.
nlohmann::json to_json(const ChatRequest& r);
ChatRequest chat_request_from_json(const nlohmann::json& j);

// Stable identity of a request's content, used to key recordings.
std::string request_key(const ChatRequest& r);

ChatRequest user_request(std::string prompt, std::string model = "gpt-4o", int maxTokens = 512);

struct AttemptRecord {
    int attempt = 0;
    int httpStatus = 0;  // 0 when no response arrived
    std::string error;
    std::chrono::milliseconds backoff{0};  // wait before the next attempt
};

class ChatError : public Error {
public:
    ChatError(const std::string& what, std::vector<AttemptRecord> attempts)
        : Error(what), attempts_(std::move(attempts)) {}
    const std::vector<AttemptRecord>& attempts() const { return attempts_; }

private:
    std::vector<AttemptRecord> attempts_;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    // Must be safe to call from several threads at once.
    virtual std::string complete(const ChatRequest& request) = 0;
};

struct HttpOptions {
    std::string endpoint;  // full URL of the chat-completions route
    std::string apiKey;
    int maxAttempts = 3;
    std::chrono::milliseconds initialBackoff{500};
    std::function<void(std::chrono::milliseconds)> sleep;  // defaults to std::this_thread::sleep_for
};

struct ChatResult {
    std::string content;
    std::vector<AttemptRecord> attempts;
};

/// Posts to an OpenAI-compatible chat-completions endpoint. Timeouts,
/// connection errors, 429 and 5xx are retried with exponential backoff;
/// other statuses fail immediately.
class HttpChatBackend : public ChatBackend {
public:
    explicit HttpChatBackend(HttpOptions options);
    std::string complete(const ChatRequest& request) override;
    ChatResult complete_with_log(const ChatRequest& request);

private:
    HttpOptions options_;
    std::string base_;  // scheme://host[:port]
    std::string path_;
};

// Extracts choices[0].message.content from a response body.
std::string parse_chat_response(std::string_view body);

class FunctionBackend : public ChatBackend {
public:
    using Fn = std::function<std::string(const ChatRequest&)>;
    explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}
    std::string complete(const ChatRequest& request) override { return fn_(request); }

private:
    Fn fn_;
};

struct RecordedExchange {
    std::string key;
    ChatRequest request;
    std::string response;
};

std::vector<RecordedExchange> load_recording(const std::filesystem::path& path);

// Serves responses recorded earlier, looked up by request content.
class ReplayBackend : public ChatBackend {
public:
    explicit ReplayBackend(const std::filesystem::path& path);
    explicit ReplayBackend(std::vector<RecordedExchange> exchanges);
    std::string complete(const ChatRequest& request) override;
    std::size_t size() const { return responses_.size(); }

private:
    std::map<std::string, std::string, std::less<>> responses_;
};

// Forwards to `inner` and appends each new (request, response) pair to a JSONL file.
class RecordingBackend : public ChatBackend {
public:
    RecordingBackend(ChatBackend& inner, const std::filesystem::path& path);
    std::string complete(const ChatRequest& request) override;

private:
    ChatBackend& inner_;
    std::filesystem::path path_;
    std::mutex mu_;
    std::map<std::string, bool, std::less<>> written_;
};

struct BackendOptions {
    bool offline = false;
    std::optional<std::filesystem::path> replay;
    std::optional<std::filesystem::path> record;
    std::string endpoint;  // overrides the environment when set
};

/// Replay if requested; otherwise HTTP using CNRANK_ENDPOINT / CNRANK_API_KEY
/// (NOTEHELP_ENDPOINT / NOTEHELP_API_KEY also accepted), optionally wrapped in
/// a recorder. Offline mode without a replay file is a usage error.
class BackendStack {
public:
    explicit BackendStack(const BackendOptions& options);
    ChatBackend& backend() { return *top_; }

private:
    std::unique_ptr<ChatBackend> base_;
    std::unique_ptr<ChatBackend> recorder_;
    ChatBackend* top_ = nullptr;
};

// ---- parsing --------------------------------------------------------------

class ParseError : public Error {
public:
    using Error::Error;
};

struct PredictedReason {
    std::string name;               // trimmed, as emitted
    std::optional<ReasonTag> tag;   // nullopt: UNKNOWN

    bool unknown() const { return !tag.has_value(); }
};

struct PredictionOutput {
    Helpfulness helpfulness = Helpfulness::Helpful;
    std::vector<PredictedReason> reasons;
    std::string raw;

    ReasonSet known_reasons() const;
    std::size_t unknown_count() const;
};

// First balanced {...} in `text`, honoring JSON string quoting; nullopt if none.
std::optional<std::string_view> find_json_object(std::string_view text);

/// Parses a prediction answer. Accepts prose around the object, unquoted
/// helpfulness values, and "reasons" as a ";"-separated string or an array.
/// Throws ParseError on anything else; never crashes on arbitrary bytes.
PredictionOutput parse_prediction(std::string_view raw);

enum class FcLabel : std::uint8_t { Supports, Refutes, NotEnoughInfo, Disputed };
std::string_view to_string(FcLabel v);
std::optional<FcLabel> fc_label_from_string(std::string_view s);

struct FcVerdict {
    FcLabel label = FcLabel::NotEnoughInfo;
    std::string reason;
};

FcVerdict parse_fc_verdict(std::string_view raw);

// ---- batch prediction -----------------------------------------------------

struct PredictOptions {
    std::size_t maxInFlight = 4;
    std::string model = "gpt-4o";
    int maxTokens = 256;
};

struct PredictResult {
    std::string id;
    std::optional<PredictionOutput> output;
    std::string error;  // set when output is empty
};

// Bindings for ${claim}, ${note} and, when `defs` is given, ${reason definitions}.
Bindings prediction_bindings(const DatasetExample& ex, const DefinitionSet* defs);

/// Renders `tmpl` for each example and queries `backend` with at most
/// `maxInFlight` requests outstanding. Results keep input order; per-example
/// failures are recorded, never thrown.
std::vector<PredictResult> predict_batch(std::span<const DatasetExample> examples, const PromptTemplate& tmpl,
                                         const DefinitionSet* defs, ChatBackend& backend,
                                         const PredictOptions& options = {});

nlohmann::json to_json(const PredictResult& r);

}  // namespace notehelp
