#include "rcdpo/pipeline/config.hpp"

#include <fstream>
#include <set>

#include "rcdpo/errors.hpp"

namespace rcdpo {

namespace {

// Reads optional keys of one JSON object and rejects whatever was not read.
class Section {
public:
    Section(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigInvalid(where_ + " must be a JSON object");
    }

    template <class T>
    void get(const char* key, T& dst) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            dst = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigInvalid(where_ + "." + key + ": " + e.what());
        }
    }

    const nlohmann::json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (!seen_.contains(key)) throw ConfigInvalid("unknown config key '" + where_ + "." + key + "'");
        }
    }

private:
    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigInvalid("config value out of range: " + what);
}

}  // namespace

void TrainConfig::validate() const {
    hyper.validate();
    require(sft_epochs >= 1, "sft_epochs >= 1");
    require(dpo_epochs >= 1, "dpo_epochs >= 1");
    require(objective == "rc-dpo" || objective == "dpo", "objective in {rc-dpo, dpo}");
    require(negative_answer == "sampled" || negative_answer == "positive", "negative_answer in {sampled, positive}");
    require(workers >= 1 && workers <= 256, "workers in [1, 256]");
    require(!out.empty(), "out must be set");
    require(environment.inputs >= 1, "environment.inputs >= 1");
    require(environment.demonstrations >= 1, "environment.demonstrations >= 1");
    require(environment.hallucination_rate >= 0.0 && environment.hallucination_rate <= 1.0,
            "environment.hallucination_rate in [0,1]");
    require(policy.architecture == "attn" || policy.architecture == "table", "policy.architecture in {attn, table}");
    require(policy.d_model >= 1 && policy.layers >= 1 && policy.heads >= 1 && policy.d_model % policy.heads == 0,
            "policy dimensions (d_model divisible by heads)");
    require(policy.buckets >= 1, "policy.buckets >= 1");
    require(policy.init_scale >= 0.0, "policy.init_scale >= 0");
    require(policy.pretrain_lr > 0.0, "policy.pretrain_lr > 0");
    require(decode.temperature >= 0.0, "decode.temperature >= 0");
    require(decode.limits.max_step_tokens >= 1 && decode.limits.max_answer_tokens >= 1 &&
                decode.limits.max_response_tokens >= 4,
            "decode limits");
    require(search.mode == "sample" || search.mode == "enumerate", "search.mode in {sample, enumerate}");
    require(search.expand_attempts >= 1, "search.expand_attempts >= 1");
    require(optimizer.kind == "sgd" || optimizer.kind == "adam", "optimizer.kind in {sgd, adam}");
    require(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0 &&
                optimizer.epsilon > 0.0,
            "optimizer moments");
    require(verifier.kind == "mock" || verifier.kind == "remote", "verifier.kind in {mock, remote}");
    require(verifier.kind != "remote" || !verifier.url.empty(), "verifier.url required for the remote verifier");
    require(verifier.max_in_flight >= 1 && verifier.max_in_flight <= 1024, "verifier.max_in_flight in [1, 1024]");
}

nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json hyper;
    to_json(hyper, c.hyper);
    return {
        {"hyper", hyper},
        {"sft_epochs", c.sft_epochs},
        {"dpo_epochs", c.dpo_epochs},
        {"seed", c.seed},
        {"objective", c.objective},
        {"negative_answer", c.negative_answer},
        {"workers", c.workers},
        {"out", c.out.generic_string()},
        {"environment",
         {{"inputs", c.environment.inputs},
          {"demonstrations", c.environment.demonstrations},
          {"hallucination_rate", c.environment.hallucination_rate}}},
        {"policy",
         {{"architecture", c.policy.architecture},
          {"d_model", c.policy.d_model},
          {"layers", c.policy.layers},
          {"heads", c.policy.heads},
          {"buckets", c.policy.buckets},
          {"init_scale", c.policy.init_scale},
          {"pretrain_epochs", c.policy.pretrain_epochs},
          {"pretrain_lr", c.policy.pretrain_lr}}},
        {"decode",
         {{"temperature", c.decode.temperature},
          {"max_step_tokens", c.decode.limits.max_step_tokens},
          {"max_answer_tokens", c.decode.limits.max_answer_tokens},
          {"max_response_tokens", c.decode.limits.max_response_tokens},
          {"sft_retries", c.decode.sft_retries}}},
        {"search",
         {{"mode", c.search.mode},
          {"normalize_reward", c.search.normalize_reward},
          {"expand_attempts", c.search.expand_attempts}}},
        {"optimizer",
         {{"kind", c.optimizer.kind},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"epsilon", c.optimizer.epsilon}}},
        {"verifier",
         {{"kind", c.verifier.kind},
          {"url", c.verifier.url},
          {"max_in_flight", c.verifier.max_in_flight},
          {"retries", c.verifier.retries},
          {"timeout_seconds", c.verifier.timeout_seconds}}},
    };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    Section top(j, "config");
    if (const auto* h = top.child("hyper")) {
        try {
            from_json(*h, c.hyper);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigInvalid(std::string("hyper: ") + e.what());
        }
    }
    top.get("sft_epochs", c.sft_epochs);
    top.get("dpo_epochs", c.dpo_epochs);
    top.get("seed", c.seed);
    top.get("objective", c.objective);
    top.get("negative_answer", c.negative_answer);
    top.get("workers", c.workers);
    std::string out = c.out.generic_string();
    top.get("out", out);
    c.out = out;
    if (const auto* e = top.child("environment")) {
        Section s(*e, "environment");
        s.get("inputs", c.environment.inputs);
        s.get("demonstrations", c.environment.demonstrations);
        s.get("hallucination_rate", c.environment.hallucination_rate);
        s.finish();
    }
    if (const auto* p = top.child("policy")) {
        Section s(*p, "policy");
        s.get("architecture", c.policy.architecture);
        s.get("d_model", c.policy.d_model);
        s.get("layers", c.policy.layers);
        s.get("heads", c.policy.heads);
        s.get("buckets", c.policy.buckets);
        s.get("init_scale", c.policy.init_scale);
        s.get("pretrain_epochs", c.policy.pretrain_epochs);
        s.get("pretrain_lr", c.policy.pretrain_lr);
        s.finish();
    }
    if (const auto* d = top.child("decode")) {
        Section s(*d, "decode");
        s.get("temperature", c.decode.temperature);
        s.get("max_step_tokens", c.decode.limits.max_step_tokens);
        s.get("max_answer_tokens", c.decode.limits.max_answer_tokens);
        s.get("max_response_tokens", c.decode.limits.max_response_tokens);
        s.get("sft_retries", c.decode.sft_retries);
        s.finish();
    }
    if (const auto* m = top.child("search")) {
        Section s(*m, "search");
        s.get("mode", c.search.mode);
        s.get("normalize_reward", c.search.normalize_reward);
        s.get("expand_attempts", c.search.expand_attempts);
        s.finish();
    }
    if (const auto* o = top.child("optimizer")) {
        Section s(*o, "optimizer");
        s.get("kind", c.optimizer.kind);
        s.get("beta1", c.optimizer.beta1);
        s.get("beta2", c.optimizer.beta2);
        s.get("epsilon", c.optimizer.epsilon);
        s.finish();
    }
    if (const auto* v = top.child("verifier")) {
        Section s(*v, "verifier");
        s.get("kind", c.verifier.kind);
        s.get("url", c.verifier.url);
        s.get("max_in_flight", c.verifier.max_in_flight);
        s.get("retries", c.verifier.retries);
        s.get("timeout_seconds", c.verifier.timeout_seconds);
        s.finish();
    }
    top.finish();
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigInvalid("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigInvalid(path.string() + ": " + e.what());
    }
    return train_config_from_json(j);
}

}  // namespace rcdpo
