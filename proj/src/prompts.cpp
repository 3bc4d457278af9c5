#include "tracvc/prompts.hpp"

#include "tracvc/common.hpp"

namespace tracvc {

namespace {

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

}  // namespace

std::string build_answer_prompt(std::string_view question) {
    if (blank(question)) throw InputError("answer prompt: empty question");
    std::string out(kAnswerTemplate);
    out.replace(out.find(kQuestionSlot), kQuestionSlot.size(), question);
    return out;
}

std::string build_confidence_context(std::string_view question, std::string_view answer) {
    if (blank(answer)) throw InputError("confidence context: empty answer");
    std::string out = build_answer_prompt(question);
    out += ' ';
    out += answer;
    out += ' ';
    out += kConfidencePrompt;
    return out;
}

void CompletionRecord::validate() const {
    if (blank(question)) throw InputError("completion: empty question");
    if (blank(answer)) throw InputError("completion: empty answer");
    if (prompt != kConfidencePrompt) throw InputError("completion: prompt differs from the confidence prompt");
    if (confidence && blank(*confidence)) throw InputError("completion: empty verbalized confidence");
}

}  // namespace tracvc
