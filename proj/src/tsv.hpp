#pragma once

// Internal helpers for tab-separated tables with a header row.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "notehelp/error.hpp"

namespace notehelp::detail {

std::vector<std::string_view> split_tabs(std::string_view line);

class TsvTable {
public:
    explicit TsvTable(const std::filesystem::path& path);

    const std::vector<std::string>& header() const { return header_; }
    const std::filesystem::path& path() const { return path_; }

    // Throws naming the column if it is missing.
    std::size_t require(std::string_view column) const;
    std::optional<std::size_t> find(std::string_view column) const;

    // Reads the next data row; false at end of file. `lineNo` is 1-based.
    bool next(std::vector<std::string_view>& fields, std::size_t& lineNo);

private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::string line_;
    std::size_t lineNo_ = 0;
    std::vector<std::string> header_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline std::optional<std::int64_t> parse_int(std::string_view s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace notehelp::detail
