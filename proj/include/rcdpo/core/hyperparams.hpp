#pragma once

#include <cmath>
#include <cstddef>

#include <nlohmann/json.hpp>

namespace rcdpo {

struct HyperParams {
    double beta = 0.1;        // KL-penalty coefficient
    double lambda_rc = 0.1;   // weight of the reasoning-conditioned term
    double prune_ratio = 0.2;
    double ucb_alpha = std::sqrt(2.0);
    double ucb_epsilon = 1e-6;
    std::size_t max_children = 3;
    std::size_t max_depth = 10;
    std::size_t iterations = 30;
    double sft_lr = 0.05;
    double dpo_lr = 0.5;
    std::size_t batch_size = 32;

    /// Throws ConfigInvalid naming the first out-of-range field.
    void validate() const;
};

void to_json(nlohmann::json& j, const HyperParams& p);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, HyperParams& p);

}  // namespace rcdpo
