#pragma once

#include <cstdint>

#include "rcdpo/policy/policy.hpp"

namespace rcdpo {

/// Small causal attention policy:
///
///     h0[t] = Embed[s_t]
///     h_{l+1}[t] = h_l[t] + Wo_l * concat_h( sum_{k<=t} A^{(l,h)}_{t,k} * V_l h_l[k] )
///     logits(. | s_<=t) = Wout * h_L[t] + bout
///
/// with A^{(l,h)} = softmax_k(q_t . k_k / sqrt(d_head)). No positional
/// encoding and no normalization layers; order enters through the causal mask.
/// Gradients are analytic (hand-written backward pass).
class AttnPolicy final : public PolicyModel {
public:
    struct Config {
        std::uint32_t vocab_size = 0;
        std::uint32_t d_model = 16;
        std::uint32_t layers = 1;
        std::uint32_t heads = 2;
    };

    explicit AttnPolicy(const Config& config);
    AttnPolicy(const Config& config, double init_scale, std::uint64_t seed);

    static AttnPolicy from_architecture(const nlohmann::json& arch);

    const Config& config() const noexcept { return config_; }

    // Parameter block offsets, exposed for tests that hand-set weights.
    std::size_t embedding_offset(Token t) const noexcept;
    std::size_t query_offset(std::size_t layer) const noexcept;
    std::size_t key_offset(std::size_t layer) const noexcept;
    std::size_t value_offset(std::size_t layer) const noexcept;
    std::size_t output_offset(std::size_t layer) const noexcept;
    std::size_t head_offset() const noexcept;
    std::size_t head_bias_offset() const noexcept;

    std::uint32_t vocab_size() const noexcept override { return config_.vocab_size; }
    std::span<const double> parameters() const noexcept override { return params_; }
    nlohmann::json architecture() const override;
    std::vector<double> next_logits(std::span<const Token> context) const override;
    std::vector<double> token_logprobs(std::span<const Token> context,
                                       std::span<const Token> target) const override;
    void accumulate_logprob_gradient(std::span<const Token> context, std::span<const Token> target, double weight,
                                     std::span<double> grad) const override;
    AttentionTensor attentions(std::span<const Token> sequence) const override;
    std::unique_ptr<PolicyModel> clone() const override;

protected:
    std::span<double> params_mut() noexcept override { return params_; }

private:
    struct Forward;
    Forward forward(std::span<const Token> seq) const;
    std::vector<double> head_logits(const Forward& f, std::size_t position) const;

    Config config_;
    std::vector<double> params_;
};

}  // namespace rcdpo
