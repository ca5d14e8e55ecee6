#include "rcdpo/core/hyperparams.hpp"

#include <set>
#include <string>

#include "rcdpo/errors.hpp"

namespace rcdpo {

void HyperParams::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw ConfigInvalid(std::string("hyperparameter out of range: ") + what);
    };
    require(std::isfinite(beta) && beta > 0.0, "beta > 0");
    require(std::isfinite(lambda_rc) && lambda_rc >= 0.0, "lambda_rc >= 0");
    require(prune_ratio >= 0.0 && prune_ratio <= 1.0, "prune_ratio in [0,1]");
    require(std::isfinite(ucb_alpha) && ucb_alpha > 0.0, "ucb_alpha > 0");
    require(std::isfinite(ucb_epsilon) && ucb_epsilon > 0.0, "ucb_epsilon > 0");
    require(max_children >= 1, "max_children >= 1");
    require(max_depth >= 1, "max_depth >= 1");
    require(iterations >= 1, "iterations >= 1");
    require(std::isfinite(sft_lr) && sft_lr > 0.0, "sft_lr > 0");
    require(std::isfinite(dpo_lr) && dpo_lr > 0.0, "dpo_lr > 0");
    require(batch_size >= 1, "batch_size >= 1");
}

void to_json(nlohmann::json& j, const HyperParams& p) {
    j = nlohmann::json{{"beta", p.beta},
                       {"lambda_rc", p.lambda_rc},
                       {"prune_ratio", p.prune_ratio},
                       {"ucb_alpha", p.ucb_alpha},
                       {"ucb_epsilon", p.ucb_epsilon},
                       {"max_children", p.max_children},
                       {"max_depth", p.max_depth},
                       {"iterations", p.iterations},
                       {"sft_lr", p.sft_lr},
                       {"dpo_lr", p.dpo_lr},
                       {"batch_size", p.batch_size}};
}

void from_json(const nlohmann::json& j, HyperParams& p) {
    static const std::set<std::string> known = {"beta",        "lambda_rc",    "prune_ratio", "ucb_alpha",
                                                "ucb_epsilon", "max_children", "max_depth",   "iterations",
                                                "sft_lr",      "dpo_lr",       "batch_size"};
    if (!j.is_object()) throw ConfigInvalid("hyperparams must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw ConfigInvalid("unknown hyperparameter '" + key + "'");
    }
    try {
        p.beta = j.value("beta", p.beta);
        p.lambda_rc = j.value("lambda_rc", p.lambda_rc);
        p.prune_ratio = j.value("prune_ratio", p.prune_ratio);
        p.ucb_alpha = j.value("ucb_alpha", p.ucb_alpha);
        p.ucb_epsilon = j.value("ucb_epsilon", p.ucb_epsilon);
        p.max_children = j.value("max_children", p.max_children);
        p.max_depth = j.value("max_depth", p.max_depth);
        p.iterations = j.value("iterations", p.iterations);
        p.sft_lr = j.value("sft_lr", p.sft_lr);
        p.dpo_lr = j.value("dpo_lr", p.dpo_lr);
        p.batch_size = j.value("batch_size", p.batch_size);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigInvalid(std::string("hyperparams: ") + e.what());
    }
}

}  // namespace rcdpo
