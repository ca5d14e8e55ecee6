#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rcdpo/core/token.hpp"

namespace rcdpo {

/// x = (v, q): abstract image tokens followed by the question tokens. The
/// model context always starts with the image tokens, so their positions are
/// [0, image_tokens.size()).
struct MultimodalInput {
    TokenSeq image_tokens;
    TokenSeq prompt_tokens;

    TokenSeq context() const;
    std::size_t image_size() const noexcept { return image_tokens.size(); }
    void validate() const;

    bool operator==(const MultimodalInput&) const = default;
};

/// One reasoning step. `tokens` holds the step content only; the header and
/// the <END> marker are materialized by `Trajectory::cot_tokens()`.
struct ReasoningStep {
    TokenSeq tokens;
    bool terminated = true;

    bool operator==(const ReasoningStep&) const = default;
};

/// A CoT c (ordered steps) plus a final answer a.
///
/// Segment convention: the CoT segment owns THINK_OPEN through THINK_CLOSE
/// inclusive, every step materializes as STEP_HEADER content.. [STEP_END];
/// the answer segment is ANSWER_OPEN content.. ANSWER_CLOSE. Hence
///   |cot_tokens()| = 2 + sum over steps of (|tokens| + 1 + terminated).
struct Trajectory {
    std::vector<ReasoningStep> steps;
    TokenSeq answer_tokens;

    bool complete() const noexcept;
    TokenSeq cot_tokens() const;
    TokenSeq answer_segment() const;
    TokenSeq response_tokens() const;

    bool operator==(const Trajectory&) const = default;
};

std::size_t step_token_count(const ReasoningStep& step) noexcept;

/// Materialized CoT segment for a list of steps.
TokenSeq cot_segment(std::span<const ReasoningStep> steps);
TokenSeq answer_segment(std::span<const Token> answer_content);

/// Inverse of `cot_segment`; throws MalformedResponse (position = token index).
std::vector<ReasoningStep> split_cot_segment(std::span<const Token> cot);
/// Inverse of `answer_segment`; throws MalformedResponse.
TokenSeq answer_content(std::span<const Token> answer);

/// One preference example (x, c_w, a_w, c_l, a_l). All four sequences are
/// materialized segments as defined on Trajectory.
struct PreferenceRecord {
    MultimodalInput input;
    TokenSeq cot_w;
    TokenSeq ans_w;
    TokenSeq cot_l;
    TokenSeq ans_l;

    void validate(std::uint32_t vocab_size) const;
    bool operator==(const PreferenceRecord&) const = default;
};

struct SftRecord {
    MultimodalInput input;
    Trajectory trajectory;

    void validate(std::uint32_t vocab_size) const;
    bool operator==(const SftRecord&) const = default;
};

}  // namespace rcdpo
