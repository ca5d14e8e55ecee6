#include "rcdpo/core/dataset_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "rcdpo/errors.hpp"

namespace rcdpo {

namespace {

nlohmann::json ids(std::span<const Token> seq) {
    auto arr = nlohmann::json::array();
    for (auto t : seq) arr.push_back(t.id);
    return arr;
}

TokenSeq tokens_from_array(const nlohmann::json& arr, const char* field) {
    if (!arr.is_array()) throw std::invalid_argument(std::string(field) + " must be an array");
    TokenSeq out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
        if (!v.is_number_unsigned()) throw std::invalid_argument(std::string(field) + " must hold token ids");
        out.push_back(Token{v.get<std::uint32_t>()});
    }
    return out;
}

TokenSeq tokens(const nlohmann::json& j, const char* field) { return tokens_from_array(j.at(field), field); }

template <typename Record, typename Parse>
std::vector<Record> read_lines(std::istream& in, std::uint32_t vocab_size, Parse parse) {
    std::vector<Record> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            Record r = parse(nlohmann::json::parse(line));
            r.validate(vocab_size);
            out.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw DatasetError(e.what(), line_no);
        }
    }
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

}  // namespace

nlohmann::json to_json(const SftRecord& record) {
    auto cot = nlohmann::json::array();
    for (const auto& s : record.trajectory.steps) cot.push_back(ids(s.tokens));
    return {{"image_tokens", ids(record.input.image_tokens)},
            {"prompt_tokens", ids(record.input.prompt_tokens)},
            {"cot", cot},
            {"answer", ids(record.trajectory.answer_tokens)}};
}

nlohmann::json to_json(const PreferenceRecord& record) {
    return {{"image_tokens", ids(record.input.image_tokens)},
            {"prompt_tokens", ids(record.input.prompt_tokens)},
            {"cot_w", ids(record.cot_w)},
            {"ans_w", ids(record.ans_w)},
            {"cot_l", ids(record.cot_l)},
            {"ans_l", ids(record.ans_l)}};
}

SftRecord sft_record_from_json(const nlohmann::json& j) {
    SftRecord r;
    r.input.image_tokens = tokens(j, "image_tokens");
    r.input.prompt_tokens = tokens(j, "prompt_tokens");
    const auto& cot = j.at("cot");
    if (!cot.is_array()) throw std::invalid_argument("cot must be an array of steps");
    for (const auto& step : cot) r.trajectory.steps.push_back(ReasoningStep{tokens_from_array(step, "cot"), true});
    r.trajectory.answer_tokens = tokens(j, "answer");
    return r;
}

PreferenceRecord preference_record_from_json(const nlohmann::json& j) {
    PreferenceRecord r;
    r.input.image_tokens = tokens(j, "image_tokens");
    r.input.prompt_tokens = tokens(j, "prompt_tokens");
    r.cot_w = tokens(j, "cot_w");
    r.ans_w = tokens(j, "ans_w");
    r.cot_l = tokens(j, "cot_l");
    r.ans_l = tokens(j, "ans_l");
    return r;
}

void write_sft_jsonl(std::ostream& out, const std::vector<SftRecord>& records) {
    for (const auto& r : records) out << to_json(r).dump() << '\n';
}

void write_preference_jsonl(std::ostream& out, const std::vector<PreferenceRecord>& records) {
    for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::vector<SftRecord> read_sft_jsonl(std::istream& in, std::uint32_t vocab_size) {
    return read_lines<SftRecord>(in, vocab_size, sft_record_from_json);
}

std::vector<PreferenceRecord> read_preference_jsonl(std::istream& in, std::uint32_t vocab_size) {
    return read_lines<PreferenceRecord>(in, vocab_size, preference_record_from_json);
}

void save_sft_dataset(const std::filesystem::path& path, const std::vector<SftRecord>& records) {
    auto out = open_out(path);
    write_sft_jsonl(out, records);
}

void save_preference_dataset(const std::filesystem::path& path, const std::vector<PreferenceRecord>& records) {
    auto out = open_out(path);
    write_preference_jsonl(out, records);
}

std::vector<SftRecord> load_sft_dataset(const std::filesystem::path& path, std::uint32_t vocab_size) {
    auto in = open_in(path);
    return read_sft_jsonl(in, vocab_size);
}

std::vector<PreferenceRecord> load_preference_dataset(const std::filesystem::path& path,
                                                      std::uint32_t vocab_size) {
    auto in = open_in(path);
    return read_preference_jsonl(in, vocab_size);
}

}  // namespace rcdpo
