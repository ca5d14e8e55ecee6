#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "rcdpo/core/rng.hpp"
#include "rcdpo/core/token.hpp"
#include "rcdpo/core/trajectory.hpp"
#include "rcdpo/policy/policy.hpp"

namespace rcdpo {

/// Draws from softmax(logits / temperature). temperature == 0 selects the
/// argmax (lowest id on ties); negative or non-finite temperature throws.
Token sample_next(const PolicyModel& model, std::span<const Token> context, double temperature, Rng& rng);

/// Same draw restricted to `allowed` (renormalized over that set).
Token sample_from(std::span<const double> logits, std::span<const Token> allowed, double temperature, Rng& rng);

struct DecodeLimits {
    std::size_t max_step_tokens = 12;    // content tokens per step; STEP_END is forced after this
    std::size_t max_answer_tokens = 8;   // content tokens; exceeding it raises RolloutOverflow
    std::size_t max_response_tokens = 256;  // budget for unconstrained generation
};

/// Structured decoding: the sampler only offers tokens that keep the
/// response well formed.
///   step start    -> STEP_HEADER | THINK_CLOSE (THINK_CLOSE needs >= 1 step)
///   inside a step -> text token | STEP_END (after >= 1 content token)
///   answer        -> ANSWER_OPEN, then text | ANSWER_CLOSE (after >= 1 content token)
class StructuredDecoder {
public:
    StructuredDecoder(const PolicyModel& model, const Vocabulary& vocab, DecodeLimits limits = {});

    /// Samples the next step after `steps` or returns nullopt when the model
    /// closes the CoT.
    std::optional<ReasoningStep> sample_step(const MultimodalInput& x, std::span<const ReasoningStep> steps,
                                             double temperature, Rng& rng) const;

    /// Answer content sampled after the closed CoT made of `steps`.
    TokenSeq sample_answer(const MultimodalInput& x, std::span<const ReasoningStep> steps, double temperature,
                           Rng& rng) const;

    /// Completes `prefix` with further steps (at most `max_steps` in total,
    /// THINK_CLOSE forced at the limit) and an answer.
    Trajectory complete(const MultimodalInput& x, std::vector<ReasoningStep> prefix, std::size_t max_steps,
                        double temperature, Rng& rng) const;

    struct StepOption {
        std::optional<ReasoningStep> step;  // nullopt = close the CoT
        double logprob = 0.0;              // under the restricted distribution
    };
    /// The `k` most probable next steps under the restricted distribution,
    /// best first (ties by token order). Branches below `min_logprob` are cut.
    std::vector<StepOption> top_steps(const MultimodalInput& x, std::span<const ReasoningStep> steps,
                                      std::size_t k, bool allow_close, double min_logprob = -30.0) const;

    const DecodeLimits& limits() const noexcept { return limits_; }

private:
    std::vector<Token> step_start_allowed(bool allow_close) const;
    std::vector<Token> in_step_allowed(std::size_t content) const;
    std::vector<Token> answer_allowed(std::size_t content) const;

    const PolicyModel& model_;
    const Vocabulary& vocab_;
    DecodeLimits limits_;
    std::vector<Token> text_tokens_;
};

/// Unconstrained generation after THINK_OPEN until ANSWER_CLOSE or the token
/// budget. Returns the response tokens starting with THINK_OPEN.
TokenSeq sample_free(const PolicyModel& model, const MultimodalInput& x, double temperature, Rng& rng,
                     std::size_t max_tokens);

}  // namespace rcdpo
