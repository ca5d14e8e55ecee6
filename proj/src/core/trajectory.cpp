#include "rcdpo/core/trajectory.hpp"

#include <string>

#include "rcdpo/errors.hpp"

namespace rcdpo {

namespace {

void check_ids(std::span<const Token> seq, std::uint32_t vocab_size, const char* field) {
    for (auto t : seq) {
        if (t.id >= vocab_size) {
            throw UnknownToken(std::string(field) + ": token id " + std::to_string(t.id) +
                               " >= vocabulary size " + std::to_string(vocab_size));
        }
    }
}

}  // namespace

TokenSeq MultimodalInput::context() const {
    TokenSeq out;
    out.reserve(image_tokens.size() + prompt_tokens.size());
    out.insert(out.end(), image_tokens.begin(), image_tokens.end());
    out.insert(out.end(), prompt_tokens.begin(), prompt_tokens.end());
    return out;
}

void MultimodalInput::validate() const {
    if (image_tokens.empty()) throw std::invalid_argument("image_tokens must be non-empty");
    if (prompt_tokens.empty()) throw std::invalid_argument("prompt_tokens must be non-empty");
}

bool Trajectory::complete() const noexcept {
    if (steps.empty() || answer_tokens.empty()) return false;
    for (const auto& s : steps) {
        if (!s.terminated || s.tokens.empty()) return false;
    }
    return true;
}

std::size_t step_token_count(const ReasoningStep& step) noexcept {
    return step.tokens.size() + 1 + (step.terminated ? 1 : 0);
}

TokenSeq cot_segment(std::span<const ReasoningStep> steps) {
    TokenSeq out{markers::kThinkOpen};
    for (const auto& s : steps) {
        out.push_back(markers::kStepHeader);
        out.insert(out.end(), s.tokens.begin(), s.tokens.end());
        if (s.terminated) out.push_back(markers::kStepEnd);
    }
    out.push_back(markers::kThinkClose);
    return out;
}

TokenSeq answer_segment(std::span<const Token> answer_content) {
    TokenSeq out{markers::kAnswerOpen};
    out.insert(out.end(), answer_content.begin(), answer_content.end());
    out.push_back(markers::kAnswerClose);
    return out;
}

TokenSeq Trajectory::cot_tokens() const { return cot_segment(steps); }

TokenSeq Trajectory::answer_segment() const { return rcdpo::answer_segment(answer_tokens); }

TokenSeq Trajectory::response_tokens() const {
    TokenSeq out = cot_tokens();
    TokenSeq ans = answer_segment();
    out.insert(out.end(), ans.begin(), ans.end());
    return out;
}

std::vector<ReasoningStep> split_cot_segment(std::span<const Token> cot) {
    if (cot.size() < 2 || cot.front() != markers::kThinkOpen || cot.back() != markers::kThinkClose) {
        throw MalformedResponse("CoT segment must be delimited by THINK_OPEN/THINK_CLOSE", 0);
    }
    std::vector<ReasoningStep> steps;
    bool in_step = false;
    for (std::size_t i = 1; i + 1 < cot.size(); ++i) {
        const Token t = cot[i];
        if (t == markers::kStepHeader) {
            steps.emplace_back();
            steps.back().terminated = false;
            in_step = true;
        } else if (t == markers::kStepEnd) {
            if (!in_step || steps.back().tokens.empty()) {
                throw MalformedResponse("STEP_END without step content", i);
            }
            steps.back().terminated = true;
            in_step = false;
        } else if (markers::is_structural(t)) {
            throw MalformedResponse("unexpected structural token inside CoT segment", i);
        } else {
            if (!in_step) throw MalformedResponse("step content without STEP_HEADER", i);
            steps.back().tokens.push_back(t);
        }
    }
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (steps[i].tokens.empty()) throw MalformedResponse("empty reasoning step", i);
    }
    return steps;
}

TokenSeq answer_content(std::span<const Token> answer) {
    if (answer.size() < 2 || answer.front() != markers::kAnswerOpen ||
        answer.back() != markers::kAnswerClose) {
        throw MalformedResponse("answer segment must be delimited by ANSWER_OPEN/ANSWER_CLOSE", 0);
    }
    for (std::size_t i = 1; i + 1 < answer.size(); ++i) {
        if (markers::is_structural(answer[i])) {
            throw MalformedResponse("structural token inside answer segment", i);
        }
    }
    return TokenSeq(answer.begin() + 1, answer.end() - 1);
}

void PreferenceRecord::validate(std::uint32_t vocab_size) const {
    input.validate();
    check_ids(input.image_tokens, vocab_size, "image_tokens");
    check_ids(input.prompt_tokens, vocab_size, "prompt_tokens");
    check_ids(cot_w, vocab_size, "cot_w");
    check_ids(ans_w, vocab_size, "ans_w");
    check_ids(cot_l, vocab_size, "cot_l");
    check_ids(ans_l, vocab_size, "ans_l");
    // Structural checks also enforce non-emptiness of every segment.
    if (split_cot_segment(cot_w).empty()) throw std::invalid_argument("cot_w has no steps");
    if (split_cot_segment(cot_l).empty()) throw std::invalid_argument("cot_l has no steps");
    if (answer_content(ans_w).empty()) throw std::invalid_argument("ans_w is empty");
    if (answer_content(ans_l).empty()) throw std::invalid_argument("ans_l is empty");
    if (cot_w == cot_l) throw SameCondition("cot_w equals cot_l");
}

void SftRecord::validate(std::uint32_t vocab_size) const {
    input.validate();
    check_ids(input.image_tokens, vocab_size, "image_tokens");
    check_ids(input.prompt_tokens, vocab_size, "prompt_tokens");
    if (!trajectory.complete()) throw IncompleteTrajectory("SFT trajectory is not complete");
    for (const auto& s : trajectory.steps) {
        check_ids(s.tokens, vocab_size, "cot");
        for (auto t : s.tokens) {
            if (markers::is_structural(t)) throw std::invalid_argument("structural token in step content");
        }
    }
    check_ids(trajectory.answer_tokens, vocab_size, "answer");
    for (auto t : trajectory.answer_tokens) {
        if (markers::is_structural(t)) throw std::invalid_argument("structural token in answer content");
    }
}

}  // namespace rcdpo
