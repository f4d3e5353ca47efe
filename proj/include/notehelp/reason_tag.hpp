#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace notehelp {

// The canonical 18 reason labels: 8 helpful followed by 10 unhelpful.
enum class ReasonTag : std::uint8_t {
    AddressesClaim,
    Clear,
    Empathetic,
    GoodSources,
    ImportantContext,
    Informative,
    UnbiasedLanguage,
    UniqueContext,
    ArgumentativeOrBiased,
    HardToUnderstand,
    Incorrect,
    IrrelevantSources,
    MissingKeyPoints,
    NoteNotNeeded,
    OffTopic,
    OpinionSpeculationOrBias,
    SourcesMissingOrUnreliable,
    SpamHarassmentOrAbuse,
};

inline constexpr std::size_t kReasonCount = 18;
inline constexpr std::size_t kHelpfulReasonCount = 8;

using ReasonSet = std::bitset<kReasonCount>;

enum class Polarity : std::uint8_t { Helpful, NotHelpful };

const std::array<ReasonTag, kReasonCount>& all_reason_tags();

constexpr std::size_t index_of(ReasonTag t) { return static_cast<std::size_t>(t); }
constexpr ReasonTag tag_at(std::size_t i) { return static_cast<ReasonTag>(i); }

constexpr Polarity polarity_of(ReasonTag t) {
    return index_of(t) < kHelpfulReasonCount ? Polarity::Helpful : Polarity::NotHelpful;
}

// Wire name as used in the public data schema and in prompts,
// e.g. "helpfulClear", "notHelpfulIncorrect".
std::string_view wire_name(ReasonTag t);

// Exact (case-sensitive) lookup of a canonical wire name.
std::optional<ReasonTag> tag_from_wire(std::string_view name);

// Case-insensitive lookup that also accepts bare names ("Clear") and the
// merged raw alias notHelpfulOpinionSpeculation.
std::optional<ReasonTag> tag_from_loose(std::string_view name);

/// How a raw rating-table tag column maps onto the canonical set.
enum class RawTagKind : std::uint8_t {
    Canonical,  // maps 1:1 (or via the opinion-speculation merge)
    Other,      // helpfulOther / notHelpfulOther: dropped, and a record carrying only these is excluded
    Ignored,    // other raw columns outside the canonical set (e.g. notHelpfulOutdated)
};

struct RawTagMapping {
    RawTagKind kind;
    std::optional<ReasonTag> tag;
    Polarity polarity;
};

// Classifies a raw tag column name; nullopt if it is not a reason-tag column.
std::optional<RawTagMapping> classify_raw_tag(std::string_view rawName);

ReasonSet polarity_mask(Polarity p);

std::vector<ReasonTag> to_tags(const ReasonSet& s);
ReasonSet to_set(const std::vector<ReasonTag>& tags);

}  // namespace notehelp
