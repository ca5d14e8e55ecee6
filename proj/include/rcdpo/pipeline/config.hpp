#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "rcdpo/core/hyperparams.hpp"
#include "rcdpo/policy/sampling.hpp"

namespace rcdpo {

struct EnvironmentConfig {
    std::size_t inputs = 200;          // tasks used for SFT data, search and training
    std::size_t demonstrations = 240; // format demonstrations for the base model
    double hallucination_rate = 0.3;
};

struct PolicyConfig {
    std::string architecture = "attn";  // "attn" or "table"
    std::uint32_t d_model = 16;
    std::uint32_t layers = 1;
    std::uint32_t heads = 2;
    std::uint32_t buckets = 16;
    double init_scale = 0.1;
    std::size_t pretrain_epochs = 20;   // format pretraining of the base model
    double pretrain_lr = 0.05;
};

struct DecodeConfig {
    double temperature = 1.0;
    DecodeLimits limits;
    std::size_t sft_retries = 3;
};

struct SearchConfig {
    std::string mode = "sample";  // "sample" or "enumerate"
    bool normalize_reward = false;
    std::size_t expand_attempts = 16;
};

struct OptimizerConfig {
    std::string kind = "sgd";  // "sgd" or "adam"
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct VerifierConfig {
    std::string kind = "mock";  // "mock" or "remote"
    std::string url;
    std::size_t max_in_flight = 4;
    std::size_t retries = 2;
    double timeout_seconds = 30.0;
};

/// Mirrors the JSON config document. Unknown keys are rejected at every level.
struct TrainConfig {
    HyperParams hyper;
    std::size_t sft_epochs = 3;
    std::size_t dpo_epochs = 1;
    std::uint64_t seed = 7;
    std::string objective = "rc-dpo";        // "rc-dpo" or "dpo"
    std::string negative_answer = "sampled"; // "sampled" (a_l = sampled answer) or "positive" (a_l = a_w), experimental
    std::size_t workers = 1;
    std::filesystem::path out = "runs/default";
    EnvironmentConfig environment;
    PolicyConfig policy;
    DecodeConfig decode;
    SearchConfig search;
    OptimizerConfig optimizer;
    VerifierConfig verifier;

    /// Throws ConfigInvalid.
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Throws ConfigInvalid on unknown keys, wrong types or out-of-range values.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

}  // namespace rcdpo
