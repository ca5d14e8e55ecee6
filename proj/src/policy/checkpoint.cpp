#include "rcdpo/policy/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include "rcdpo/errors.hpp"
#include "rcdpo/policy/attn_policy.hpp"
#include "rcdpo/policy/table_policy.hpp"

namespace rcdpo {

std::unique_ptr<PolicyModel> make_policy(const nlohmann::json& architecture) {
    try {
        const auto kind = architecture.at("kind").get<std::string>();
        if (kind == "table") return std::make_unique<TablePolicy>(TablePolicy::from_architecture(architecture));
        if (kind == "attn") return std::make_unique<AttnPolicy>(AttnPolicy::from_architecture(architecture));
        throw CheckpointError("unknown architecture kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("bad architecture descriptor: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("bad architecture descriptor: ") + e.what());
    }
}

nlohmann::json checkpoint_json(const PolicyModel& model) {
    const auto params = model.parameters();
    return {{"architecture", model.architecture()},
            {"vocab_size", model.vocab_size()},
            {"params", std::vector<double>(params.begin(), params.end())}};
}

std::unique_ptr<PolicyModel> policy_from_checkpoint(const nlohmann::json& doc) {
    std::unique_ptr<PolicyModel> model;
    std::vector<double> params;
    try {
        model = make_policy(doc.at("architecture"));
        if (doc.at("vocab_size").get<std::uint32_t>() != model->vocab_size()) {
            throw CheckpointError("vocab_size does not match the architecture");
        }
        params = doc.at("params").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
    }
    auto dst = model->mutable_parameters();
    if (params.size() != dst.size()) {
        throw CheckpointError("expected " + std::to_string(dst.size()) + " parameters, found " +
                              std::to_string(params.size()));
    }
    std::copy(params.begin(), params.end(), dst.begin());
    return model;
}

void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out << checkpoint_json(model).dump() << '\n';
    if (!out) throw CheckpointError("write failed for " + path.string());
}

std::unique_ptr<PolicyModel> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
    return policy_from_checkpoint(doc);
}

}  // namespace rcdpo
