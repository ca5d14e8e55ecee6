#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace rcdpo {

/// Case-folded, whitespace-trimmed object label.
std::string normalize_label(std::string_view label);

struct CaptionRecord {
    std::set<std::string> mentioned_objects;
    std::set<std::string> ground_truth_objects;

    /// Builds a record with normalized labels.
    static CaptionRecord make(const std::vector<std::string>& mentioned, const std::vector<std::string>& gt);
};

struct ChairScores {
    double sentence = 0.0;  // C_S, percent of records with a hallucinated object
    double instance = 0.0;  // C_I, percent of hallucinated mentions
};

/// Throws std::invalid_argument on an empty list and EmptyMentionSet when no
/// record mentions anything.
ChairScores chair(std::span<const CaptionRecord> records);

struct PopeRecord {
    bool label = false;       // object present
    bool prediction = false;  // model said yes
};

struct PopeMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// "yes" is the positive class; precision and recall are 0 when their
/// denominator is 0, and F1 is 0 when P + R = 0.
PopeMetrics pope_metrics(std::span<const PopeRecord> records);

struct SegmentCaption {
    std::set<std::string> cot_mentions;
    std::set<std::string> answer_mentions;
    std::set<std::string> ground_truth;
};

/// C_S is always defined; C_I is empty for a segment with no mentions at all.
struct SegmentChairScore {
    double sentence = 0.0;
    std::optional<double> instance;
};

struct SegmentChair {
    SegmentChairScore full;
    SegmentChairScore cot;
    SegmentChairScore answer;
};

SegmentChair segment_chair(std::span<const SegmentCaption> records);

/// Exact-match object extraction with a synonym map (surface form -> label).
/// Multi-word surface forms match on word boundaries; matching is case-folded.
class ObjectLexicon {
public:
    ObjectLexicon() = default;
    explicit ObjectLexicon(const std::map<std::string, std::string>& synonyms);

    void add(std::string_view surface, std::string_view label);
    std::set<std::string> extract(std::string_view text) const;

private:
    std::map<std::vector<std::string>, std::string> entries_;
    std::size_t longest_ = 0;
};

/// JSON Lines fixtures: {"mentioned":[...],"gt":[...]} and
/// {"label":"yes|no","prediction":"yes|no"}. Throw DatasetError with a line number.
std::vector<CaptionRecord> load_chair_fixture(const std::filesystem::path& path);
std::vector<PopeRecord> load_pope_fixture(const std::filesystem::path& path);

nlohmann::json to_json(const ChairScores& s);
nlohmann::json to_json(const PopeMetrics& m);

}  // namespace rcdpo
