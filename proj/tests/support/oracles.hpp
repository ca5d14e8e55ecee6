// Independent reference computations shared by the unit tests and the
// acceptance binary. Nothing here calls the code paths it is used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rcdpo/core/token.hpp"
#include "rcdpo/core/trajectory.hpp"
#include "rcdpo/policy/policy.hpp"

namespace oracle {

using rcdpo::Token;
using rcdpo::TokenSeq;

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// Direct softmax probability of `target` from raw logits.
inline double softmax_logprob(const std::vector<double>& logits, std::size_t target) {
    double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    return logits[target] - m - std::log(z);
}

/// Sequence log-likelihood assembled one next_logits call at a time.
inline double stepwise_loglik(const rcdpo::PolicyModel& model, TokenSeq ctx, std::span<const Token> target) {
    double s = 0.0;
    for (auto t : target) {
        s += softmax_logprob(model.next_logits(ctx), t.id);
        ctx.push_back(t);
    }
    return s;
}

/// Central differences of f at the model's parameters.
inline std::vector<double> central_difference(rcdpo::PolicyModel& model, const std::function<double()>& f,
                                              double h = 1e-5) {
    auto p = model.mutable_parameters();
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + h;
        const double up = f();
        p[i] = keep - h;
        const double down = f();
        p[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

/// Elementwise relative error with an absolute floor for entries near zero.
inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

inline std::vector<std::string> word_list(std::size_t n) {
    std::vector<std::string> w;
    for (std::size_t i = 0; i < n; ++i) w.push_back("w" + std::to_string(i));
    return w;
}

/// Random complete trajectory over text ids in [text_begin, vocab_size).
inline rcdpo::Trajectory random_trajectory(std::mt19937_64& rng, std::uint32_t text_begin, std::uint32_t vocab_size,
                                           std::size_t max_steps = 4, std::size_t max_len = 5) {
    std::uniform_int_distribution<std::size_t> steps(1, max_steps), len(1, max_len);
    std::uniform_int_distribution<std::uint32_t> tok(text_begin, vocab_size - 1);
    rcdpo::Trajectory t;
    const auto n = steps(rng);
    for (std::size_t i = 0; i < n; ++i) {
        rcdpo::ReasoningStep s;
        const auto l = len(rng);
        for (std::size_t j = 0; j < l; ++j) s.tokens.push_back(Token{tok(rng)});
        t.steps.push_back(std::move(s));
    }
    const auto a = len(rng);
    for (std::size_t j = 0; j < a; ++j) t.answer_tokens.push_back(Token{tok(rng)});
    return t;
}

inline rcdpo::MultimodalInput random_input(std::mt19937_64& rng, std::uint32_t image_begin, std::uint32_t image_end,
                                           std::uint32_t text_begin, std::uint32_t vocab_size) {
    std::uniform_int_distribution<std::uint32_t> img(image_begin, image_end - 1), txt(text_begin, vocab_size - 1);
    std::uniform_int_distribution<std::size_t> len(1, 4);
    rcdpo::MultimodalInput x;
    for (std::size_t i = len(rng); i > 0; --i) x.image_tokens.push_back(Token{img(rng)});
    for (std::size_t i = len(rng); i > 0; --i) x.prompt_tokens.push_back(Token{txt(rng)});
    return x;
}

/// Brute-force image-attention score: plain loops over the tensor accessor.
inline double brute_force_score(const rcdpo::AttentionTensor& a, std::size_t t, const std::vector<std::size_t>& image,
                                const std::vector<std::size_t>& layers, const std::vector<std::size_t>& heads) {
    double s = 0.0;
    for (std::size_t l : layers)
        for (std::size_t h : heads)
            for (std::size_t k : image) s += a.at(l, h, t, k);
    return s / static_cast<double>(layers.size() * heads.size());
}

}  // namespace oracle
