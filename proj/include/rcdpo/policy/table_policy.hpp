#pragma once

#include <cstdint>

#include "rcdpo/policy/policy.hpp"

namespace rcdpo {

/// Table policy with three additive logit tables:
///
///     logits(. | s_<p) = Transition[s_{p-1}] + Bucket[b(x)] + (1/p) sum_{j<p} Context[s_j]
///
/// b(x) is an FNV-1a hash of the leading run of image tokens modulo
/// `buckets`. The context table is an order-free mean over the whole prefix,
/// which lets answer likelihoods depend on the CoT they follow. All gradients
/// are exact. No attention is exposed.
class TablePolicy final : public PolicyModel {
public:
    struct Config {
        std::uint32_t vocab_size = 0;
        std::uint32_t buckets = 16;
        std::uint32_t image_begin = 0;  // image-token id range [image_begin, image_end)
        std::uint32_t image_end = 0;
    };

    explicit TablePolicy(const Config& config);
    /// Parameters drawn from N(0, init_scale^2) with a seeded generator.
    TablePolicy(const Config& config, double init_scale, std::uint64_t seed);

    static TablePolicy from_architecture(const nlohmann::json& arch);

    const Config& config() const noexcept { return config_; }
    std::uint32_t context_bucket(std::span<const Token> context) const noexcept;

    std::size_t transition_offset(Token prev, Token next) const noexcept;
    std::size_t bucket_offset(std::uint32_t bucket, Token next) const noexcept;
    std::size_t context_offset(Token seen, Token next) const noexcept;

    std::uint32_t vocab_size() const noexcept override { return config_.vocab_size; }
    std::span<const double> parameters() const noexcept override { return params_; }
    nlohmann::json architecture() const override;
    std::vector<double> next_logits(std::span<const Token> context) const override;
    std::vector<double> token_logprobs(std::span<const Token> context,
                                       std::span<const Token> target) const override;
    void accumulate_logprob_gradient(std::span<const Token> context, std::span<const Token> target, double weight,
                                     std::span<double> grad) const override;
    std::unique_ptr<PolicyModel> clone() const override;

protected:
    std::span<double> params_mut() noexcept override { return params_; }

private:
    // Logits at every target position of context ++ target.
    std::vector<std::vector<double>> position_logits(std::span<const Token> seq, std::size_t first) const;

    Config config_;
    std::vector<double> params_;
};

}  // namespace rcdpo
