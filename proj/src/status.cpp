#include "notehelp/status.hpp"

namespace notehelp {

std::string_view to_string(Status s) {
    switch (s) {
        case Status::CurrentlyRatedHelpful: return "CURRENTLY_RATED_HELPFUL";
        case Status::CurrentlyRatedNotHelpful: return "CURRENTLY_RATED_NOT_HELPFUL";
        case Status::NeedMoreRatings: return "NEED_MORE_RATINGS";
    }
    return "NEED_MORE_RATINGS";
}

std::optional<Status> status_from_string(std::string_view s) {
    if (s == "CURRENTLY_RATED_HELPFUL") return Status::CurrentlyRatedHelpful;
    if (s == "CURRENTLY_RATED_NOT_HELPFUL") return Status::CurrentlyRatedNotHelpful;
    if (s == "NEEDS_MORE_RATINGS" || s == "NEED_MORE_RATINGS") return Status::NeedMoreRatings;
    return std::nullopt;
}

}  // namespace notehelp
