#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcdpo/core/trajectory.hpp"

namespace rcdpo {

// JSON Lines datasets. Field names are fixed:
//   SFT:        {"image_tokens","prompt_tokens","cot":[[...],...],"answer"}
//   preference: {"image_tokens","prompt_tokens","cot_w","ans_w","cot_l","ans_l"}

nlohmann::json to_json(const SftRecord& record);
nlohmann::json to_json(const PreferenceRecord& record);
SftRecord sft_record_from_json(const nlohmann::json& j);
PreferenceRecord preference_record_from_json(const nlohmann::json& j);

void write_sft_jsonl(std::ostream& out, const std::vector<SftRecord>& records);
void write_preference_jsonl(std::ostream& out, const std::vector<PreferenceRecord>& records);

/// Loaders validate every record against its invariants and throw
/// DatasetError carrying the 1-based line number of the first bad line.
std::vector<SftRecord> read_sft_jsonl(std::istream& in, std::uint32_t vocab_size);
std::vector<PreferenceRecord> read_preference_jsonl(std::istream& in, std::uint32_t vocab_size);

void save_sft_dataset(const std::filesystem::path& path, const std::vector<SftRecord>& records);
void save_preference_dataset(const std::filesystem::path& path,
                             const std::vector<PreferenceRecord>& records);
std::vector<SftRecord> load_sft_dataset(const std::filesystem::path& path, std::uint32_t vocab_size);
std::vector<PreferenceRecord> load_preference_dataset(const std::filesystem::path& path,
                                                      std::uint32_t vocab_size);

}  // namespace rcdpo
