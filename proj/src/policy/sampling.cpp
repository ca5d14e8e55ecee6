#include "rcdpo/policy/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

#include "rcdpo/errors.hpp"

namespace rcdpo {

namespace {

TokenSeq open_cot(const MultimodalInput& x, std::span<const ReasoningStep> steps) {
    TokenSeq ctx = x.context();
    TokenSeq cot = cot_segment(steps);
    ctx.insert(ctx.end(), cot.begin(), cot.end() - 1);  // without THINK_CLOSE
    return ctx;
}

void check_temperature(double temperature) {
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
        throw std::invalid_argument("temperature must be finite and >= 0");
    }
}

}  // namespace

Token sample_from(std::span<const double> logits, std::span<const Token> allowed, double temperature, Rng& rng) {
    check_temperature(temperature);
    if (allowed.empty()) throw std::invalid_argument("no allowed tokens");
    for (auto t : allowed) {
        if (t.id >= logits.size()) throw UnknownToken("allowed token outside the logit vector");
    }
    if (temperature == 0.0) {
        Token best = allowed.front();
        for (auto t : allowed) {
            if (logits[t.id] > logits[best.id] || (logits[t.id] == logits[best.id] && t.id < best.id)) best = t;
        }
        return best;
    }
    double m = -INFINITY;
    for (auto t : allowed) m = std::max(m, logits[t.id] / temperature);
    std::vector<double> w(allowed.size());
    double z = 0.0;
    for (std::size_t i = 0; i < allowed.size(); ++i) {
        w[i] = std::exp(logits[allowed[i].id] / temperature - m);
        z += w[i];
    }
    double u = uniform01(rng) * z;
    for (std::size_t i = 0; i < allowed.size(); ++i) {
        if (u < w[i]) return allowed[i];
        u -= w[i];
    }
    // Rounding left u past the last bucket; return the last token with mass.
    for (std::size_t i = allowed.size(); i-- > 0;) {
        if (w[i] > 0.0) return allowed[i];
    }
    return allowed.back();
}

Token sample_next(const PolicyModel& model, std::span<const Token> context, double temperature, Rng& rng) {
    const auto logits = model.next_logits(context);
    std::vector<Token> all(logits.size());
    for (std::uint32_t i = 0; i < all.size(); ++i) all[i] = Token{i};
    return sample_from(logits, all, temperature, rng);
}

StructuredDecoder::StructuredDecoder(const PolicyModel& model, const Vocabulary& vocab, DecodeLimits limits)
    : model_(model), vocab_(vocab), limits_(limits) {
    if (vocab.size() != model.vocab_size()) throw std::invalid_argument("vocabulary and model size differ");
    if (limits_.max_step_tokens == 0 || limits_.max_answer_tokens == 0) {
        throw std::invalid_argument("decode limits must be positive");
    }
    for (std::uint32_t i = vocab.text_begin(); i < vocab.size(); ++i) text_tokens_.push_back(Token{i});
    if (text_tokens_.empty()) throw std::invalid_argument("vocabulary has no text tokens");
}

std::vector<Token> StructuredDecoder::step_start_allowed(bool allow_close) const {
    if (allow_close) return {markers::kThinkClose, markers::kStepHeader};
    return {markers::kStepHeader};
}

std::vector<Token> StructuredDecoder::in_step_allowed(std::size_t content) const {
    if (content >= limits_.max_step_tokens) return {markers::kStepEnd};
    std::vector<Token> out;
    if (content > 0) out.push_back(markers::kStepEnd);
    out.insert(out.end(), text_tokens_.begin(), text_tokens_.end());
    return out;
}

std::vector<Token> StructuredDecoder::answer_allowed(std::size_t content) const {
    std::vector<Token> out;
    if (content > 0) out.push_back(markers::kAnswerClose);
    out.insert(out.end(), text_tokens_.begin(), text_tokens_.end());
    return out;
}

std::optional<ReasoningStep> StructuredDecoder::sample_step(const MultimodalInput& x,
                                                            std::span<const ReasoningStep> steps,
                                                            double temperature, Rng& rng) const {
    TokenSeq ctx = open_cot(x, steps);
    const Token first = sample_from(model_.next_logits(ctx), step_start_allowed(!steps.empty()), temperature, rng);
    if (first == markers::kThinkClose) return std::nullopt;
    ctx.push_back(markers::kStepHeader);
    ReasoningStep step;
    for (;;) {
        const Token t = sample_from(model_.next_logits(ctx), in_step_allowed(step.tokens.size()), temperature, rng);
        if (t == markers::kStepEnd) break;
        step.tokens.push_back(t);
        ctx.push_back(t);
    }
    step.terminated = true;
    return step;
}

TokenSeq StructuredDecoder::sample_answer(const MultimodalInput& x, std::span<const ReasoningStep> steps,
                                          double temperature, Rng& rng) const {
    TokenSeq ctx = x.context();
    TokenSeq cot = cot_segment(steps);
    ctx.insert(ctx.end(), cot.begin(), cot.end());
    ctx.push_back(markers::kAnswerOpen);
    TokenSeq content;
    for (;;) {
        if (content.size() > limits_.max_answer_tokens) {
            throw RolloutOverflow("answer exceeded " + std::to_string(limits_.max_answer_tokens) + " tokens");
        }
        const Token t = sample_from(model_.next_logits(ctx), answer_allowed(content.size()), temperature, rng);
        if (t == markers::kAnswerClose) break;
        content.push_back(t);
        ctx.push_back(t);
    }
    return content;
}

Trajectory StructuredDecoder::complete(const MultimodalInput& x, std::vector<ReasoningStep> prefix,
                                       std::size_t max_steps, double temperature, Rng& rng) const {
    Trajectory t;
    t.steps = std::move(prefix);
    while (t.steps.size() < max_steps) {
        auto step = sample_step(x, t.steps, temperature, rng);
        if (!step) break;
        t.steps.push_back(std::move(*step));
    }
    if (t.steps.empty()) throw RolloutOverflow("max_steps = 0 leaves no room for a reasoning step");
    t.answer_tokens = sample_answer(x, t.steps, temperature, rng);
    return t;
}

std::vector<StructuredDecoder::StepOption> StructuredDecoder::top_steps(const MultimodalInput& x,
                                                                        std::span<const ReasoningStep> steps,
                                                                        std::size_t k, bool allow_close,
                                                                        double min_logprob) const {
    std::vector<StepOption> out;
    if (k == 0) return out;
    const TokenSeq base = open_cot(x, steps);
    const bool close_ok = allow_close && !steps.empty();

    // Best-first search over partial steps. Each extension multiplies by a
    // probability <= 1, so finished items pop in exact probability order.
    struct Item {
        double logprob;
        bool close;
        bool done;
        TokenSeq content;
    };
    auto worse = [](const Item& a, const Item& b) {
        if (a.logprob != b.logprob) return a.logprob < b.logprob;
        if (a.close != b.close) return !a.close;  // close sorts first on ties
        return b.content < a.content;
    };
    std::priority_queue<Item, std::vector<Item>, decltype(worse)> frontier(worse);

    {
        const auto allowed = step_start_allowed(close_ok);
        const auto logits = model_.next_logits(base);
        std::vector<double> sub;
        for (auto t : allowed) sub.push_back(logits[t.id]);
        const double lse = log_sum_exp(sub);
        for (std::size_t i = 0; i < allowed.size(); ++i) {
            const double lp = sub[i] - lse;
            if (lp < min_logprob) continue;
            frontier.push({lp, allowed[i] == markers::kThinkClose, allowed[i] == markers::kThinkClose, {}});
        }
    }

    constexpr std::size_t kMaxPops = 20000;
    std::size_t pops = 0;
    while (!frontier.empty() && out.size() < k && pops++ < kMaxPops) {
        Item item = frontier.top();
        frontier.pop();
        if (item.done) {
            StepOption opt;
            opt.logprob = item.logprob;
            if (!item.close) opt.step = ReasoningStep{item.content, true};
            out.push_back(std::move(opt));
            continue;
        }
        TokenSeq ctx = base;
        ctx.push_back(markers::kStepHeader);
        ctx.insert(ctx.end(), item.content.begin(), item.content.end());
        const auto allowed = in_step_allowed(item.content.size());
        const auto logits = model_.next_logits(ctx);
        std::vector<double> sub;
        for (auto t : allowed) sub.push_back(logits[t.id]);
        const double lse = log_sum_exp(sub);
        for (std::size_t i = 0; i < allowed.size(); ++i) {
            const double lp = item.logprob + (sub[i] - lse);
            if (lp < min_logprob) continue;
            Item next{lp, false, allowed[i] == markers::kStepEnd, item.content};
            if (!next.done) next.content.push_back(allowed[i]);
            frontier.push(std::move(next));
        }
    }
    return out;
}

TokenSeq sample_free(const PolicyModel& model, const MultimodalInput& x, double temperature, Rng& rng,
                     std::size_t max_tokens) {
    TokenSeq ctx = x.context();
    const std::size_t start = ctx.size();
    ctx.push_back(markers::kThinkOpen);
    while (ctx.size() - start < max_tokens) {
        const Token t = sample_next(model, ctx, temperature, rng);
        ctx.push_back(t);
        if (t == markers::kAnswerClose) break;
    }
    return TokenSeq(ctx.begin() + static_cast<std::ptrdiff_t>(start), ctx.end());
}

}  // namespace rcdpo
