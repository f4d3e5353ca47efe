#include "notehelp/manifest.hpp"

#include <fstream>

#include "notehelp/error.hpp"
#include "notehelp/hash.hpp"

namespace notehelp {

using nlohmann::json;

FileFingerprint fingerprint(std::string role, const std::filesystem::path& path) {
    std::error_code ec;
    const auto bytes = std::filesystem::file_size(path, ec);
    if (ec) throw Error("cannot stat " + path.string() + ": " + ec.message());
    return FileFingerprint{std::move(role), path, sha256_file(path), bytes};
}

void RunManifest::add_input(std::string role, const std::filesystem::path& path) {
    inputs.push_back(fingerprint(std::move(role), path));
}

void RunManifest::add_output(std::string role, const std::filesystem::path& path) {
    outputs.push_back(fingerprint(std::move(role), path));
}

namespace {

json to_json(const FileFingerprint& f) {
    return json{{"role", f.role}, {"path", f.path.generic_string()}, {"sha256", f.sha256}, {"bytes", f.bytes}};
}

FileFingerprint fingerprint_from_json(const json& j) {
    return FileFingerprint{j.at("role").get<std::string>(), j.at("path").get<std::string>(),
                           j.at("sha256").get<std::string>(), j.at("bytes").get<std::uintmax_t>()};
}

template <typename T>
json nullable(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace

json to_json(const RunManifest& m) {
    json inputs = json::array(), outputs = json::array();
    for (const auto& f : m.inputs) inputs.push_back(to_json(f));
    for (const auto& f : m.outputs) outputs.push_back(to_json(f));
    return json{{"command", m.command},
                {"argv", m.argv},
                {"tool_version", m.toolVersion},
                {"seed", nullable(m.seed)},
                {"config", m.config},
                {"inputs", inputs},
                {"outputs", outputs},
                {"started_at", nullable(m.startedAt)},
                {"ended_at", nullable(m.endedAt)},
                {"summary", m.summary}};
}

RunManifest run_manifest_from_json(const json& j) {
    try {
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.argv = j.at("argv").get<std::vector<std::string>>();
        m.toolVersion = j.value("tool_version", "");
        if (j.contains("seed") && !j["seed"].is_null()) m.seed = j["seed"].get<std::uint64_t>();
        m.config = j.value("config", json::object());
        for (const auto& f : j.at("inputs")) m.inputs.push_back(fingerprint_from_json(f));
        for (const auto& f : j.at("outputs")) m.outputs.push_back(fingerprint_from_json(f));
        if (j.contains("started_at") && !j["started_at"].is_null()) m.startedAt = j["started_at"].get<std::string>();
        if (j.contains("ended_at") && !j["ended_at"].is_null()) m.endedAt = j["ended_at"].get<std::string>();
        m.summary = j.value("summary", json::object());
        return m;
    } catch (const json::exception& e) {
        throw Error(std::string("malformed manifest: ") + e.what());
    }
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << to_json(m).dump(2) << '\n';
    if (!out) throw Error("write failed: " + path.string());
}

RunManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
    return run_manifest_from_json(j);
}

std::filesystem::path manifest_path_for(const std::filesystem::path& output) {
    if (std::filesystem::is_directory(output)) return output / "manifest.json";
    auto p = output;
    p += ".manifest.json";
    return p;
}

std::vector<std::string> stale_fingerprints(std::span<const FileFingerprint> recorded) {
    std::vector<std::string> stale;
    for (const auto& f : recorded) {
        if (!std::filesystem::exists(f.path)) {
            stale.push_back(f.path.generic_string() + " (missing)");
        } else if (sha256_file(f.path) != f.sha256) {
            stale.push_back(f.path.generic_string());
        }
    }
    return stale;
}

const char* tool_version() { return NOTEHELP_VERSION; }

}  // namespace notehelp
