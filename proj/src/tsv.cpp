#include "tsv.hpp"

namespace notehelp::detail {

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

TsvTable::TsvTable(const std::filesystem::path& path) : path_(path), in_(path) {
    if (!in_) throw Error("cannot open table: " + path.string());
    if (!std::getline(in_, line_)) throw Error("table has no header row: " + path.string());
    ++lineNo_;
    if (!line_.empty() && line_.back() == '\r') line_.pop_back();
    // Tolerate a UTF-8 byte-order mark.
    if (line_.starts_with("\xEF\xBB\xBF")) line_.erase(0, 3);
    for (auto f : split_tabs(line_)) {
        index_.emplace(std::string(f), header_.size());
        header_.emplace_back(f);
    }
}

std::size_t TsvTable::require(std::string_view column) const {
    auto it = index_.find(std::string(column));
    if (it == index_.end()) {
        throw Error(path_.string() + ": missing required column '" + std::string(column) + "'");
    }
    return it->second;
}

std::optional<std::size_t> TsvTable::find(std::string_view column) const {
    auto it = index_.find(std::string(column));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

bool TsvTable::next(std::vector<std::string_view>& fields, std::size_t& lineNo) {
    while (std::getline(in_, line_)) {
        ++lineNo_;
        if (!line_.empty() && line_.back() == '\r') line_.pop_back();
        if (line_.empty()) continue;
        fields = split_tabs(line_);
        lineNo = lineNo_;
        return true;
    }
    return false;
}

}  // namespace notehelp::detail
