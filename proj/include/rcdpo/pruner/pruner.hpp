#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "rcdpo/core/attention.hpp"
#include "rcdpo/core/token.hpp"
#include "rcdpo/core/trajectory.hpp"
#include "rcdpo/policy/policy.hpp"

namespace rcdpo {

struct TokenScore {
    std::size_t position = 0;  // index into the CoT token sequence
    double score = 0.0;
};

/// Half-open token range [start, end) of one word within the CoT.
struct WordSpan {
    std::size_t start = 0;
    std::size_t end = 0;

    bool operator==(const WordSpan&) const = default;
};

struct WordScore {
    WordSpan span;
    double score = 0.0;
};

/// s(c_t) = 1/(|L||H|) * sum_{l in L} sum_{h in H} sum_{k in I} A[l][h][t][k]
/// for each CoT token t. `cot_positions[i]` is the sequence position of CoT
/// token i, and TokenScore::position is i. Throws IndexOutOfRange.
std::vector<TokenScore> image_attention_scores(const AttentionTensor& attn, std::span<const std::size_t> image_positions,
                                               std::span<const std::size_t> cot_positions,
                                               std::span<const std::size_t> layers,
                                               std::span<const std::size_t> heads);

/// Word score = max over the word's token scores. Throws UncoveredToken if a
/// scored position is in no span, std::invalid_argument if a span token has no score.
std::vector<WordScore> pool_to_words(std::span<const TokenScore> scores, std::span<const WordSpan> spans);

/// Word spans over the prunable (non-structural) CoT tokens. A "##" token
/// continues the word before it; words never cross structural markers.
std::vector<WordSpan> word_spans(std::span<const Token> cot, const Vocabulary& vocab);

/// Number of words removed: floor(r * W), at least 1 when r > 0 and W >= 1.
std::size_t prune_count(double r, std::size_t words);

/// Indices (into `word_scores`) of the words to remove: the first k of a
/// stable sort by score descending, earlier span first on ties.
std::vector<std::size_t> select_pruned(std::span<const WordScore> word_scores, double r);

/// Removes every token of the selected words; everything else, including all
/// structural markers, keeps its order.
TokenSeq prune(std::span<const Token> cot, std::span<const WordScore> word_scores, double r);

/// Drops steps left without content (their STEP_HEADER and STEP_END).
TokenSeq drop_empty_steps(std::span<const Token> cot);

struct PruneReport {
    std::vector<WordScore> words;
    std::vector<WordSpan> removed;
    TokenSeq original;   // CoT segment
    TokenSeq corrupted;  // CoT segment after pruning and step re-segmentation
};

/// Full negative construction for one sampled response: one forward pass over
/// image ++ prompt ++ cot ++ answer, scores over all layers and heads, word
/// pooling, pruning and re-segmentation.
PruneReport prune_response(const PolicyModel& model, const Vocabulary& vocab, const MultimodalInput& x,
                           std::span<const Token> cot, std::span<const Token> answer, double r);

}  // namespace rcdpo
