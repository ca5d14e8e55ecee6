#pragma once

#include <filesystem>
#include <memory>

#include <nlohmann/json.hpp>

#include "rcdpo/policy/policy.hpp"

namespace rcdpo {

/// Zero-initialized model for an architecture descriptor ("table" or "attn").
std::unique_ptr<PolicyModel> make_policy(const nlohmann::json& architecture);

/// {"architecture": ..., "vocab_size": V, "params": [...]} with parameters in
/// index order. Doubles are written in shortest round-trip form, so a reload
/// reproduces bit-identical parameters.
nlohmann::json checkpoint_json(const PolicyModel& model);
std::unique_ptr<PolicyModel> policy_from_checkpoint(const nlohmann::json& doc);

void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model);
/// Throws CheckpointError on unreadable or inconsistent files.
std::unique_ptr<PolicyModel> load_checkpoint(const std::filesystem::path& path);

}  // namespace rcdpo
