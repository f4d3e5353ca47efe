#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

namespace notehelp {

enum class Status : std::uint8_t {
    CurrentlyRatedHelpful,
    CurrentlyRatedNotHelpful,
    NeedMoreRatings,
};

std::string_view to_string(Status s);

// Accepts both NEED_MORE_RATINGS and the public-table spelling NEEDS_MORE_RATINGS.
std::optional<Status> status_from_string(std::string_view s);

}  // namespace notehelp
