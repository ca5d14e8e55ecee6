#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcdpo/core/attention.hpp"
#include "rcdpo/core/token.hpp"

namespace rcdpo {

/// Gradient with respect to a model's flat parameter vector.
struct ParamGradient {
    std::vector<double> values;

    ParamGradient() = default;
    explicit ParamGradient(std::size_t n) : values(n, 0.0) {}

    std::size_t size() const noexcept { return values.size(); }
    ParamGradient& operator+=(const ParamGradient& other);
    ParamGradient& operator*=(double scale);
    bool all_finite() const noexcept;
};

/// One term of sum_j weight_j * log pi(target_j | context_j).
struct LogprobTerm {
    std::span<const Token> context;
    std::span<const Token> target;
    double weight = 1.0;
};

/// Autoregressive conditional distribution pi(next | context) over a fixed
/// vocabulary with a flat parameter vector. pi_theta, pi_ref and pi_SFT are
/// all instances; frozen instances refuse parameter mutation.
///
/// Read-only members are safe to call concurrently.
class PolicyModel {
public:
    virtual ~PolicyModel() = default;

    virtual std::uint32_t vocab_size() const noexcept = 0;
    virtual std::span<const double> parameters() const noexcept = 0;
    /// Throws FrozenModel on frozen snapshots.
    std::span<double> mutable_parameters();

    /// Describes the architecture; stored in checkpoints.
    virtual nlohmann::json architecture() const = 0;

    /// Unnormalized next-token scores given a non-empty context.
    virtual std::vector<double> next_logits(std::span<const Token> context) const = 0;

    /// log p(target_i | context ++ target_<i) for every i.
    virtual std::vector<double> token_logprobs(std::span<const Token> context,
                                               std::span<const Token> target) const = 0;

    /// grad += weight * d/dtheta sum_i log p(target_i | ...).
    virtual void accumulate_logprob_gradient(std::span<const Token> context, std::span<const Token> target,
                                             double weight, std::span<double> grad) const = 0;

    /// Attention weights of one forward pass over `sequence`. The default
    /// throws Unsupported.
    virtual AttentionTensor attentions(std::span<const Token> sequence) const;

    virtual std::unique_ptr<PolicyModel> clone() const = 0;

    bool frozen() const noexcept { return frozen_; }
    /// Deep copy of the parameters that rejects further updates.
    std::unique_ptr<PolicyModel> freeze() const;
    /// Deep copy that accepts updates, also when taken from a frozen snapshot.
    std::unique_ptr<PolicyModel> trainable_copy() const;

protected:
    PolicyModel() = default;
    PolicyModel(const PolicyModel&) = default;
    PolicyModel& operator=(const PolicyModel&) = default;

    virtual std::span<double> params_mut() noexcept = 0;

    void check_tokens(std::span<const Token> seq) const;

private:
    bool frozen_ = false;
};

/// Per-token log-probabilities; throws UnknownToken on ids >= V and
/// std::invalid_argument on an empty context.
std::vector<double> token_logprobs(const PolicyModel& model, std::span<const Token> context,
                                   std::span<const Token> target);

/// Exact gradient of sum_j weight_j * log pi(target_j | context_j). Terms with
/// weight exactly 0 are skipped.
ParamGradient weighted_logprob_gradient(const PolicyModel& model, std::span<const LogprobTerm> terms);

AttentionTensor attentions(const PolicyModel& model, std::span<const Token> full_sequence);

/// Numerically stable log(sum(exp(x))).
double log_sum_exp(std::span<const double> x);
/// log-softmax of a logit vector.
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace rcdpo
