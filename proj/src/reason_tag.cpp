#include "notehelp/reason_tag.hpp"

#include <algorithm>
#include <cctype>

namespace notehelp {
namespace {

constexpr std::array<std::string_view, kReasonCount> kWireNames = {
    "helpfulAddressesClaim",
    "helpfulClear",
    "helpfulEmpathetic",
    "helpfulGoodSources",
    "helpfulImportantContext",
    "helpfulInformative",
    "helpfulUnbiasedLanguage",
    "helpfulUniqueContext",
    "notHelpfulArgumentativeOrBiased",
    "notHelpfulHardToUnderstand",
    "notHelpfulIncorrect",
    "notHelpfulIrrelevantSources",
    "notHelpfulMissingKeyPoints",
    "notHelpfulNoteNotNeeded",
    "notHelpfulOffTopic",
    "notHelpfulOpinionSpeculationOrBias",
    "notHelpfulSourcesMissingOrUnreliable",
    "notHelpfulSpamHarassmentOrAbuse",
};

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view strip_prefix(std::string_view wire) {
    if (wire.starts_with("notHelpful")) return wire.substr(10);
    if (wire.starts_with("helpful")) return wire.substr(7);
    return wire;
}

}  // namespace

const std::array<ReasonTag, kReasonCount>& all_reason_tags() {
    static const auto tags = [] {
        std::array<ReasonTag, kReasonCount> a{};
        for (std::size_t i = 0; i < kReasonCount; ++i) a[i] = tag_at(i);
        return a;
    }();
    return tags;
}

std::string_view wire_name(ReasonTag t) { return kWireNames[index_of(t)]; }

std::optional<ReasonTag> tag_from_wire(std::string_view name) {
    for (std::size_t i = 0; i < kReasonCount; ++i) {
        if (kWireNames[i] == name) return tag_at(i);
    }
    return std::nullopt;
}

std::optional<ReasonTag> tag_from_loose(std::string_view name) {
    const std::string key = lower(name);
    if (key == "nothelpfulopinionspeculation" || key == "opinionspeculation") {
        return ReasonTag::OpinionSpeculationOrBias;
    }
    for (std::size_t i = 0; i < kReasonCount; ++i) {
        if (lower(kWireNames[i]) == key) return tag_at(i);
    }
    // Bare names are unambiguous: no helpful and unhelpful tag share a suffix.
    for (std::size_t i = 0; i < kReasonCount; ++i) {
        if (lower(strip_prefix(kWireNames[i])) == key) return tag_at(i);
    }
    return std::nullopt;
}

std::optional<RawTagMapping> classify_raw_tag(std::string_view raw) {
    if (auto t = tag_from_wire(raw)) {
        return RawTagMapping{RawTagKind::Canonical, t, polarity_of(*t)};
    }
    if (raw == "notHelpfulOpinionSpeculation") {
        return RawTagMapping{RawTagKind::Canonical, ReasonTag::OpinionSpeculationOrBias,
                             Polarity::NotHelpful};
    }
    if (raw == "helpfulOther") return RawTagMapping{RawTagKind::Other, std::nullopt, Polarity::Helpful};
    if (raw == "notHelpfulOther") {
        return RawTagMapping{RawTagKind::Other, std::nullopt, Polarity::NotHelpful};
    }
    if (raw.starts_with("notHelpful") && raw.size() > 10) {
        return RawTagMapping{RawTagKind::Ignored, std::nullopt, Polarity::NotHelpful};
    }
    if (raw.starts_with("helpful") && raw.size() > 7 && raw != "helpfulnessLevel") {
        return RawTagMapping{RawTagKind::Ignored, std::nullopt, Polarity::Helpful};
    }
    return std::nullopt;
}

ReasonSet polarity_mask(Polarity p) {
    ReasonSet s;
    for (std::size_t i = 0; i < kReasonCount; ++i) {
        if (polarity_of(tag_at(i)) == p) s.set(i);
    }
    return s;
}

std::vector<ReasonTag> to_tags(const ReasonSet& s) {
    std::vector<ReasonTag> out;
    for (std::size_t i = 0; i < kReasonCount; ++i) {
        if (s.test(i)) out.push_back(tag_at(i));
    }
    return out;
}

ReasonSet to_set(const std::vector<ReasonTag>& tags) {
    ReasonSet s;
    for (auto t : tags) s.set(index_of(t));
    return s;
}

}  // namespace notehelp
