// Prompt texts. The appendix tables are transcribed from their LaTeX
// source: markup removed, \newline as a line break, itemize as "- " bullets.

#include <array>

#include "notehelp/llm.hpp"

namespace notehelp {

namespace {

constexpr std::string_view kOriginal = R"TXT(Given a potentially misleading CLAIM and an associated NOTE, your task is to determine whether the NOTE is helpful in clarifying the CLAIM and identify two reasons from the predefined reason set explaining why it is helpful or not helpful.

The predefined reason set is:{'helpfulAddressesClaim', 'helpfulClear', 'helpfulEmpathetic', 'helpfulGoodSources', 'helpfulImportantContext', 'helpfulInformative', 'helpfulUnbiasedLanguage', 'helpfulUniqueContext', 'notHelpfulArgumentativeOrBiased', 'notHelpfulHardToUnderstand','notHelpfulIncorrect', 'notHelpfulIrrelevantSources', 'notHelpfulMissingKeyPoints', 'notHelpfulNoteNotNeeded', 'notHelpfulOffTopic', 'notHelpfulOpinionSpeculation', 'notHelpfulOpinionSpeculationOrBias', 'notHelpfulOther', 'notHelpfulSourcesMissingOrUnreliable', 'notHelpfulSpamHarassmentOrAbuse'}

Output in the following JSON format only, no extra output:
{"helpfulness": helpful or non_helpful,"reasons":"reason1;reason2"}
CLAIM: ${claim}
NOTE: ${note}
Answer:)TXT";

constexpr std::string_view kSeedDef = R"TXT(Given a potentially misleading CLAIM and an associated NOTE, your task is to determine whether the NOTE is helpful in clarifying the CLAIM and identify two reasons from the predefined reason set explaining why it is helpful or not helpful.

Here are reasons and their definitions:
${reason definitions}

Output in the following JSON format only, no extra output:
{"helpfulness": helpful or non_helpful,"reasons":"reason1;reason2"}
CLAIM: ${claim}
NOTE: ${note}
Answer:)TXT";

constexpr std::string_view kOptimized = R"TXT(For each claim-note pair below, select exactly two reasons (from the provided list) that most accurately explain whether and why the note is helpful or not helpful for understanding or resolving the claim.
High-Level Criteria
1. Prioritizing Central, Accurate Clarification
- Assign a “helpful” reason only if the note is factually accurate, well-supported, and directly clarifies, corrects, or provides essential context for the main assertion, a key factual sub-claim, or the foundational evidence of the claim. Peripheral or partially related details are insufficient.
- If the note’s chief function is to correct a specific fact, figure, identity, date, source, or a significant misattribution or misconception central to the claim, this counts as clarification or correction (use “helpfulClear” and/or “helpfulAddressesClaim”).
- Never assign any “helpful” reason if the note contains substantive factual errors, misrepresentations, speculation, or bias regarding any key claim point or related evidence—regardless of any attempt to clarify.
2. “Helpful” Reason Prioritization
- helpfulClear and helpfulAddressesClaim take precedence over other “helpful” reasons when a note offers a direct factual correction or explicit clarification for the claim’s core point or supporting evidence.
- helpfulGoodSources should only be selected in addition if the note’s correction is fundamentally grounded in clearly cited, authoritative, and faithfully summarized sources (not just the presence of a source).
- helpfulImportantContext is used when the note supplies background or context without which the claim would be misunderstood or misinterpreted, and this context is not a direct factual correction but provides essential interpretive clarity.
- Use helpfulUnbiasedLanguage or helpfulEmpathetic only in conjunction with a substantive clarification or correction and if the neutrality or tone of the explanation is materially helpful.
When both direct correction and crucial context are present, prefer (b) helpfulClear or (a) helpfulAddressesClaim as primary, paired with (e) helpfulImportantContext as secondary only if context is indispensable and not redundant with the correction.
- helpfulGoodSources never substitutes for correction—pick it only if the faithful use of sources is a main reason for helpfulness.
3. “NotHelpful” Reason Selection
- Assign “notHelpfulIncorrect” if there is any inaccuracy, factual misstatement, or misleading claim regarding the main point or evidence.
- Assign “notHelpfulMissingKeyPoints” if the note avoids or omits addressing the core issue or supporting fact, no matter how detailed its peripheral info.
- Use “notHelpfulNoteNotNeeded” if the note is trivial, redundant, or supplies information already evident and non-essential for claim comprehension.
- “notHelpfulSourcesMissingOrUnreliable” or “notHelpfulIrrelevantSources” apply if sources are not credible, are misrepresented, or are irrelevant to the core of the claim.
- If tone, personal opinion, bias, speculation, or argumentativeness blocks any clarification, use one of the corresponding “notHelpful” reasons that best fits the limitation.
- For unclear, incomplete, or confusing notes, use “notHelpfulHardToUnderstand.”
“notHelpfulOther” and “notHelpfulOffTopic” only if none of the above describe the problem or the note is wholly irrelevant.
Reason Definitions:${reason definitions}
Decision Process Checklist
1. Is the note factually accurate and not misleading about any major point or evidence?
- If no, assign “notHelpfulIncorrect” and another as fits.
- If yes, proceed.
2. Does the note directly clarify, correct, or critically contextualize the main assertion, a key factual sub-claim, or any central supporting evidence?
- If yes, select the most specific “helpful” reason(s) per above priority order.
- If its primary value is sources, include “helpfulGoodSources” only if the sourcing itself is decisive.
- Do not select “helpfulImportantContext” unless the info is both necessary for accurate interpretation and not primarily a direct correction.
- If note only offers peripheral detail, trivia, or sidesteps the key issue, use “notHelpfulMissingKeyPoints” and/or “notHelpfulNoteNotNeeded.”
3. Is the note clear, neutral, and respectful in tone?
- If so in addition to being factually helpful, pair with “helpfulUnbiasedLanguage” or “helpfulEmpathetic” as needed.
- If tone, speculation, or bias prevents meaningful clarification, pick the corresponding “notHelpful” reason.
4. Is the note hard to understand, incomplete, or not addressing the claim?
- Assign “notHelpfulHardToUnderstand” or “notHelpfulOffTopic” as required.
5. Would a typical, reasonably attentive reader gain essential, accurate insight into the claim’s truth, context, or credibility—including debunking of misused/incorrect supporting evidence—because of this note?
- If yes, “helpful” reasons most fitting the note’s substance.
- If no, most directly explanatory “notHelpful” reasons.
Output in the following JSON format only, no extra output:
{"helpfulness": helpful or non_helpful,"reasons":"reason1;reason2"}
CLAIM: ${claim}
NOTE: ${note}
Answer:)TXT";

constexpr std::string_view kGenDef = R"TXT(You will be given a set of samples, each sample contains CLAIM, their corresponding NOTE to explain the CLAIM. All samples provided are ${helpful_label} in explaining the CLAIM and associated with the same REASON. Your task is to conclude the definition of the REASON.

Here are samples:
${samples}

The REASON for above samples being ${helpful_label} is ${reason_label}. After checking these samples, the definition of this REASON is:)TXT";

constexpr std::string_view kFcDirect = R"TXT(Fact-check the following claim using provided evidence:
Claim: ${claim}
Evidence: ${evidence_text}
Classify the claim as SUPPORTS, REFUTES, NOT_ENOUGH_INFO or DISPUTED.
Format: Classification: [YOUR_ANSWER]
Brief reason:)TXT";

constexpr std::string_view kFcHelpful = R"TXT(Fact-check this claim using the evidence and the helpfulness information of the evidence, if the evidence is not helpful, take less weight of the evidence.
Claim: ${claim}
Evidence: ${evidence_text_with_helpfulness_information}
Classify the claim as SUPPORTS, REFUTES, NOT_ENOUGH_INFO or DISPUTED.
Format: Classification: [YOUR_ANSWER]
Brief reason:)TXT";

constexpr std::string_view kFeedback = R"TXT(You are reviewing definitions of reasons used to explain why a community NOTE is helpful or not helpful for a CLAIM. A classifier that read these definitions mislabeled the cases below.

Current definitions:
${reason definitions}

Mislabeled cases:
${error_cases}

Identify the patterns behind these mistakes. For each definition involved, say what is ambiguous, too broad or too narrow, and how it should change. Answer with a short list of concrete suggestions.)TXT";

constexpr std::string_view kRefine = R"TXT(You are improving definitions of reasons used to explain why a community NOTE is helpful or not helpful for a CLAIM.

Current definitions:
${reason definitions}

Feedback on recent mistakes:
${feedback}

Write revision ${variant} of the full definition set, applying the feedback. Keep every reason name unchanged and give a definition for each one. Output a single JSON object mapping each reason name to its definition, no extra output.)TXT";

const std::array<PromptTemplate, 8>& store() {
    static const std::array<PromptTemplate, 8> templates = [] {
        auto make = [](TemplateName n, std::string_view id, std::string_view text) {
            return PromptTemplate{n, id, text, placeholders_in(text)};
        };
        return std::array<PromptTemplate, 8>{
            make(TemplateName::Original, "ORIGINAL", kOriginal),
            make(TemplateName::SeedDef, "SEED_DEF", kSeedDef),
            make(TemplateName::Optimized, "OPTIMIZED", kOptimized),
            make(TemplateName::GenDef, "GEN_DEF", kGenDef),
            make(TemplateName::FcDirect, "FC_DIRECT", kFcDirect),
            make(TemplateName::FcHelpful, "FC_HELPFUL", kFcHelpful),
            make(TemplateName::Feedback, "FEEDBACK", kFeedback),
            make(TemplateName::Refine, "REFINE", kRefine),
        };
    }();
    return templates;
}

constexpr std::array<TemplateName, 8> kAll = {TemplateName::Original, TemplateName::SeedDef,  TemplateName::Optimized,
                                              TemplateName::GenDef,   TemplateName::FcDirect, TemplateName::FcHelpful,
                                              TemplateName::Feedback, TemplateName::Refine};

}  // namespace

const PromptTemplate& prompt_template(TemplateName name) { return store()[static_cast<std::size_t>(name)]; }

std::optional<TemplateName> template_from_string(std::string_view id) {
    for (const auto& t : store()) {
        if (t.id == id) return t.name;
    }
    return std::nullopt;
}

std::span<const TemplateName> all_templates() { return kAll; }

}  // namespace notehelp
