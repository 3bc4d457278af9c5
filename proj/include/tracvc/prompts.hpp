#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace tracvc {

// Two-stage verbalized-confidence prompting. The strings are fixed; tests
// compare them byte for byte.
inline constexpr std::string_view kAnswerTemplate =
    "Answer the question, give ONLY the answer, no other words or explanation: <q>";
inline constexpr std::string_view kQuestionSlot = "<q>";
inline constexpr std::string_view kConfidencePrompt =
    "Provide the probability that your answer is correct. Give ONLY the probability "
    "between 0.0 and 1.0, no other words or explanation";

// Stage one: the answer template with the question substituted literally.
std::string build_answer_prompt(std::string_view question);

// Stage two: stage-one text, the answer, then the confidence prompt.
std::string build_confidence_context(std::string_view question, std::string_view answer);

// (q, a, p, c) as scored by the influence module. `confidence` is the
// verbalized text, absent when only the (q, a, p) completion is needed.
struct CompletionRecord {
    std::string question;
    std::string answer;
    std::string prompt{kConfidencePrompt};
    std::optional<std::string> confidence;

    // Throws InputError when q or a is empty, p differs from the constant, or
    // c is present but empty.
    void validate() const;
};

}  // namespace tracvc
