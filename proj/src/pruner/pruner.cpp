#include "rcdpo/pruner/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "rcdpo/errors.hpp"

namespace rcdpo {

std::vector<TokenScore> image_attention_scores(const AttentionTensor& attn, std::span<const std::size_t> image_positions,
                                               std::span<const std::size_t> cot_positions,
                                               std::span<const std::size_t> layers,
                                               std::span<const std::size_t> heads) {
    if (layers.empty() || heads.empty()) throw std::invalid_argument("layer and head sets must be non-empty");
    auto check = [](std::size_t i, std::size_t n, const char* what) {
        if (i >= n) {
            throw IndexOutOfRange(std::string(what) + " index " + std::to_string(i) + " >= " + std::to_string(n));
        }
    };
    for (auto l : layers) check(l, attn.layers(), "layer");
    for (auto h : heads) check(h, attn.heads(), "head");
    for (auto k : image_positions) check(k, attn.length(), "image position");
    for (auto t : cot_positions) check(t, attn.length(), "CoT position");

    const double norm = 1.0 / static_cast<double>(layers.size() * heads.size());
    std::vector<TokenScore> out;
    out.reserve(cot_positions.size());
    for (std::size_t i = 0; i < cot_positions.size(); ++i) {
        const std::size_t t = cot_positions[i];
        double s = 0.0;
        for (auto l : layers) {
            for (auto h : heads) {
                const auto row = attn.row(l, h, t);
                for (auto k : image_positions) s += row[k];
            }
        }
        out.push_back({i, s * norm});
    }
    return out;
}

std::vector<WordScore> pool_to_words(std::span<const TokenScore> scores, std::span<const WordSpan> spans) {
    std::vector<WordScore> out;
    out.reserve(spans.size());
    for (std::size_t i = 0; i < spans.size(); ++i) {
        if (spans[i].start >= spans[i].end || (i > 0 && spans[i].start < spans[i - 1].end)) {
            throw std::invalid_argument("word spans must be non-empty, ordered and disjoint");
        }
        out.push_back({spans[i], -INFINITY});
    }
    std::vector<std::size_t> covered(spans.empty() ? 0 : spans.back().end, 0);
    for (const auto& s : scores) {
        // Spans are ordered and disjoint: binary search for the first span ending after the position.
        auto it = std::upper_bound(spans.begin(), spans.end(), s.position,
                                   [](std::size_t p, const WordSpan& sp) { return p < sp.end; });
        if (it == spans.end() || s.position < it->start) {
            throw UncoveredToken("scored position " + std::to_string(s.position) + " is in no word span");
        }
        auto& w = out[static_cast<std::size_t>(it - spans.begin())];
        w.score = std::max(w.score, s.score);
        ++covered[s.position];
    }
    for (const auto& sp : spans) {
        for (std::size_t p = sp.start; p < sp.end; ++p) {
            if (covered[p] == 0) throw std::invalid_argument("token " + std::to_string(p) + " has no score");
        }
    }
    return out;
}

std::vector<WordSpan> word_spans(std::span<const Token> cot, const Vocabulary& vocab) {
    std::vector<WordSpan> spans;
    bool open = false;  // the previous token ended a prunable word
    for (std::size_t i = 0; i < cot.size(); ++i) {
        if (markers::is_structural(cot[i])) {
            open = false;
            continue;
        }
        if (open && vocab.is_continuation(cot[i])) {
            spans.back().end = i + 1;
        } else {
            spans.push_back({i, i + 1});
        }
        open = true;
    }
    return spans;
}

std::size_t prune_count(double r, std::size_t words) {
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("prune ratio must be in [0, 1]");
    if (r == 0.0 || words == 0) return 0;
    const auto k = static_cast<std::size_t>(std::floor(r * static_cast<double>(words)));
    return std::max<std::size_t>(k, 1);
}

std::vector<std::size_t> select_pruned(std::span<const WordScore> word_scores, double r) {
    const std::size_t k = prune_count(r, word_scores.size());
    std::vector<std::size_t> order(word_scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (word_scores[a].score != word_scores[b].score) return word_scores[a].score > word_scores[b].score;
        return word_scores[a].span.start < word_scores[b].span.start;
    });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

TokenSeq prune(std::span<const Token> cot, std::span<const WordScore> word_scores, double r) {
    std::vector<char> drop(cot.size(), 0);
    for (auto i : select_pruned(word_scores, r)) {
        const auto& sp = word_scores[i].span;
        if (sp.end > cot.size() || sp.start >= sp.end) throw IndexOutOfRange("word span outside the CoT");
        for (std::size_t p = sp.start; p < sp.end; ++p) {
            if (!markers::is_structural(cot[p])) drop[p] = 1;
        }
    }
    TokenSeq out;
    out.reserve(cot.size());
    for (std::size_t i = 0; i < cot.size(); ++i) {
        if (!drop[i]) out.push_back(cot[i]);
    }
    return out;
}

TokenSeq drop_empty_steps(std::span<const Token> cot) {
    TokenSeq out;
    out.reserve(cot.size());
    std::size_t i = 0;
    while (i < cot.size()) {
        if (cot[i] == markers::kStepHeader) {
            std::size_t j = i + 1;
            while (j < cot.size() && !markers::is_structural(cot[j])) ++j;
            if (j == i + 1) {
                // Empty step: skip the header and its STEP_END if present.
                i = (j < cot.size() && cot[j] == markers::kStepEnd) ? j + 1 : j;
                continue;
            }
        }
        out.push_back(cot[i]);
        ++i;
    }
    return out;
}

PruneReport prune_response(const PolicyModel& model, const Vocabulary& vocab, const MultimodalInput& x,
                           std::span<const Token> cot, std::span<const Token> answer, double r) {
    TokenSeq seq = x.context();
    const std::size_t cot_begin = seq.size();
    seq.insert(seq.end(), cot.begin(), cot.end());
    seq.insert(seq.end(), answer.begin(), answer.end());
    const AttentionTensor attn = model.attentions(seq);

    std::vector<std::size_t> image(x.image_tokens.size());
    std::iota(image.begin(), image.end(), 0);
    std::vector<std::size_t> layers(attn.layers()), heads(attn.heads());
    std::iota(layers.begin(), layers.end(), 0);
    std::iota(heads.begin(), heads.end(), 0);

    PruneReport report;
    report.original.assign(cot.begin(), cot.end());
    const auto spans = word_spans(cot, vocab);
    std::vector<std::size_t> positions;
    for (const auto& sp : spans) {
        for (std::size_t p = sp.start; p < sp.end; ++p) positions.push_back(cot_begin + p);
    }
    auto scores = image_attention_scores(attn, image, positions, layers, heads);
    // Map score indices back to CoT positions.
    std::size_t idx = 0;
    for (const auto& sp : spans) {
        for (std::size_t p = sp.start; p < sp.end; ++p) scores[idx++].position = p;
    }
    report.words = pool_to_words(scores, spans);
    for (auto i : select_pruned(report.words, r)) report.removed.push_back(report.words[i].span);
    report.corrupted = drop_empty_steps(prune(cot, report.words, r));
    return report;
}

}  // namespace rcdpo
