#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "rcdpo/pipeline/config.hpp"
#include "rcdpo/pipeline/pipeline.hpp"

namespace rcdpo {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// File names inside the output directory.
namespace artifacts {
inline constexpr std::string_view kBase = "base.ckpt.json";
inline constexpr std::string_view kSftDataset = "sft_dataset.jsonl";
inline constexpr std::string_view kSft = "sft.ckpt.json";
inline constexpr std::string_view kSftLog = "sft_log.json";
inline constexpr std::string_view kPreferences = "pref.jsonl";
inline constexpr std::string_view kPreferenceReport = "pref_report.json";
inline constexpr std::string_view kPolicy = "policy.ckpt.json";
inline constexpr std::string_view kTrainLog = "train_log.jsonl";
inline constexpr std::string_view kSegmentRatio = "segment_loss_ratio.csv";
inline constexpr std::string_view kDiagnose = "diagnose.json";
}  // namespace artifacts

/// Writes run_meta_<stage>.json: seed, config, config hash and the hashes of
/// the listed input and output files. Called once when a stage starts (no
/// outputs yet) and again when it finishes. The output directory and
/// timestamps are left out, so same-seed runs are byte-identical wherever
/// they are written.
void write_run_meta(const TrainConfig& config, std::string_view stage,
                    const std::vector<std::filesystem::path>& inputs,
                    const std::vector<std::filesystem::path>& outputs = {});

struct BaseModel {
    std::unique_ptr<PolicyModel> model;
    SftStats stats;
};

/// Format-pretrained base model: seeded init plus descent on demonstrations
/// of the output format.
BaseModel pretrain_base_model(const TrainConfig& config);

/// Each stage reads and writes files in config.out and returns a summary.
nlohmann::json run_sft_stage(const TrainConfig& config);
nlohmann::json run_build_pref_stage(const TrainConfig& config);
nlohmann::json run_train_stage(const TrainConfig& config);
nlohmann::json run_diagnose_stage(const TrainConfig& config);

struct SearchCommand {
    std::size_t input_index = 0;
    bool enumerate = false;
    bool dump_tree = false;
};
nlohmann::json run_search_stage(const TrainConfig& config, const SearchCommand& cmd);

struct PruneCommand {
    std::size_t input_index = 0;
};
nlohmann::json run_prune_stage(const TrainConfig& config, const PruneCommand& cmd);

}  // namespace rcdpo
