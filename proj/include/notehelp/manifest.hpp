#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace notehelp {

struct FileFingerprint {
    std::string role;  // flag or output name, e.g. "ratings", "train.jsonl"
    std::filesystem::path path;
    std::string sha256;
    std::uintmax_t bytes = 0;
};

FileFingerprint fingerprint(std::string role, const std::filesystem::path& path);

/// Provenance record written next to every command's outputs. Timestamps
/// come only from --now; without it they are null.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    nlohmann::json config = nlohmann::json::object();
    std::vector<FileFingerprint> inputs;
    std::vector<FileFingerprint> outputs;
    std::optional<std::uint64_t> seed;
    std::string toolVersion;
    std::optional<std::string> startedAt;
    std::optional<std::string> endedAt;
    nlohmann::json summary = nlohmann::json::object();

    void add_input(std::string role, const std::filesystem::path& path);
    void add_output(std::string role, const std::filesystem::path& path);
};

nlohmann::json to_json(const RunManifest& m);
RunManifest run_manifest_from_json(const nlohmann::json& j);

void write_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& path);

// <dir>/manifest.json for directory outputs, <file>.manifest.json otherwise.
std::filesystem::path manifest_path_for(const std::filesystem::path& output);

// Fingerprints that no longer match the file on disk.
std::vector<std::string> stale_fingerprints(std::span<const FileFingerprint> recorded);

const char* tool_version();

}  // namespace notehelp
