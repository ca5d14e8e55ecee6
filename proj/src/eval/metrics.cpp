#include "rcdpo/eval/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rcdpo/errors.hpp"

namespace rcdpo {

namespace {

std::vector<std::string> words_of(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || ch == '-' || ch == '\'') {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

bool hallucinated(const std::set<std::string>& mentioned, const std::set<std::string>& gt) {
    return std::any_of(mentioned.begin(), mentioned.end(), [&](const auto& m) { return !gt.contains(m); });
}

SegmentChairScore score_segment(const std::vector<CaptionRecord>& records) {
    SegmentChairScore s;
    std::size_t flagged = 0, mentions = 0, bad = 0;
    for (const auto& r : records) {
        if (hallucinated(r.mentioned_objects, r.ground_truth_objects)) ++flagged;
        for (const auto& m : r.mentioned_objects) {
            ++mentions;
            if (!r.ground_truth_objects.contains(m)) ++bad;
        }
    }
    s.sentence = 100.0 * static_cast<double>(flagged) / static_cast<double>(records.size());
    if (mentions > 0) s.instance = 100.0 * static_cast<double>(bad) / static_cast<double>(mentions);
    return s;
}

bool yes_no(const nlohmann::json& j, const char* key) {
    const auto v = normalize_label(j.at(key).get<std::string>());
    if (v == "yes") return true;
    if (v == "no") return false;
    throw std::invalid_argument(std::string(key) + " must be \"yes\" or \"no\"");
}

template <class Record, class Parse>
std::vector<Record> load_jsonl(const std::filesystem::path& path, Parse parse) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open " + path.string(), 0);
    std::vector<Record> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(parse(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw DatasetError(e.what(), n);
        }
    }
    return out;
}

}  // namespace

std::string normalize_label(std::string_view label) {
    std::size_t b = 0, e = label.size();
    while (b < e && std::isspace(static_cast<unsigned char>(label[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(label[e - 1]))) --e;
    std::string out(label.substr(b, e - b));
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

CaptionRecord CaptionRecord::make(const std::vector<std::string>& mentioned, const std::vector<std::string>& gt) {
    CaptionRecord r;
    for (const auto& m : mentioned) r.mentioned_objects.insert(normalize_label(m));
    for (const auto& g : gt) r.ground_truth_objects.insert(normalize_label(g));
    return r;
}

ChairScores chair(std::span<const CaptionRecord> records) {
    if (records.empty()) throw std::invalid_argument("chair needs at least one record");
    const auto s = score_segment(std::vector<CaptionRecord>(records.begin(), records.end()));
    if (!s.instance) throw EmptyMentionSet("no object is mentioned in any record");
    return {s.sentence, *s.instance};
}

PopeMetrics pope_metrics(std::span<const PopeRecord> records) {
    if (records.empty()) throw std::invalid_argument("pope_metrics needs at least one record");
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& r : records) {
        if (r.prediction) {
            (r.label ? tp : fp) += 1;
        } else {
            (r.label ? fn : tn) += 1;
        }
    }
    auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
    PopeMetrics m;
    m.accuracy = ratio(tp + tn, records.size());
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

SegmentChair segment_chair(std::span<const SegmentCaption> records) {
    if (records.empty()) throw std::invalid_argument("segment_chair needs at least one record");
    std::vector<CaptionRecord> full, cot, answer;
    for (const auto& r : records) {
        CaptionRecord u{r.cot_mentions, r.ground_truth};
        u.mentioned_objects.insert(r.answer_mentions.begin(), r.answer_mentions.end());
        full.push_back(std::move(u));
        cot.push_back({r.cot_mentions, r.ground_truth});
        answer.push_back({r.answer_mentions, r.ground_truth});
    }
    return {score_segment(full), score_segment(cot), score_segment(answer)};
}

ObjectLexicon::ObjectLexicon(const std::map<std::string, std::string>& synonyms) {
    for (const auto& [surface, label] : synonyms) add(surface, label);
}

void ObjectLexicon::add(std::string_view surface, std::string_view label) {
    auto key = words_of(surface);
    if (key.empty()) throw std::invalid_argument("lexicon surface form has no words");
    longest_ = std::max(longest_, key.size());
    entries_[std::move(key)] = normalize_label(label);
}

std::set<std::string> ObjectLexicon::extract(std::string_view text) const {
    const auto words = words_of(text);
    std::set<std::string> found;
    std::size_t i = 0;
    while (i < words.size()) {
        std::size_t matched = 0;
        // Longest match first.
        for (std::size_t len = std::min(longest_, words.size() - i); len > 0; --len) {
            std::vector<std::string> key(words.begin() + static_cast<std::ptrdiff_t>(i),
                                         words.begin() + static_cast<std::ptrdiff_t>(i + len));
            auto it = entries_.find(key);
            if (it != entries_.end()) {
                found.insert(it->second);
                matched = len;
                break;
            }
        }
        i += matched > 0 ? matched : 1;
    }
    return found;
}

std::vector<CaptionRecord> load_chair_fixture(const std::filesystem::path& path) {
    return load_jsonl<CaptionRecord>(path, [](const nlohmann::json& j) {
        return CaptionRecord::make(j.at("mentioned").get<std::vector<std::string>>(),
                                   j.at("gt").get<std::vector<std::string>>());
    });
}

std::vector<PopeRecord> load_pope_fixture(const std::filesystem::path& path) {
    return load_jsonl<PopeRecord>(path, [](const nlohmann::json& j) {
        return PopeRecord{yes_no(j, "label"), yes_no(j, "prediction")};
    });
}

nlohmann::json to_json(const ChairScores& s) { return {{"chair_s", s.sentence}, {"chair_i", s.instance}}; }

nlohmann::json to_json(const PopeMetrics& m) {
    return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

}  // namespace rcdpo
