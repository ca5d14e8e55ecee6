#pragma once

#include <random>

#include "rcdpo/core/trajectory.hpp"
#include "rcdpo/policy/attn_policy.hpp"
#include "rcdpo/policy/table_policy.hpp"
#include "support/oracles.hpp"

namespace test_support {

// Toy id layout: 6 markers, image ids [6, 9), text ids [9, 16).
inline constexpr std::uint32_t kImageBegin = rcdpo::markers::kNumReserved;
inline constexpr std::uint32_t kImageEnd = kImageBegin + 3;
inline constexpr std::uint32_t kVocab = kImageEnd + 7;

inline rcdpo::TablePolicy table_policy(std::uint64_t seed, double scale = 0.5) {
    return rcdpo::TablePolicy({kVocab, 4, kImageBegin, kImageEnd}, scale, seed);
}

inline rcdpo::AttnPolicy attn_policy(std::uint64_t seed, double scale = 0.5) {
    return rcdpo::AttnPolicy({kVocab, 6, 2, 2}, scale, seed);
}

inline rcdpo::PreferenceRecord random_record(std::mt19937_64& rng) {
    rcdpo::PreferenceRecord r;
    r.input = oracle::random_input(rng, kImageBegin, kImageEnd, kImageEnd, kVocab);
    const auto w = oracle::random_trajectory(rng, kImageEnd, kVocab, 3, 4);
    auto l = oracle::random_trajectory(rng, kImageEnd, kVocab, 3, 4);
    if (l.cot_tokens() == w.cot_tokens()) l.steps[0].tokens.push_back(rcdpo::Token{kImageEnd});
    r.cot_w = w.cot_tokens();
    r.ans_w = w.answer_segment();
    r.cot_l = l.cot_tokens();
    r.ans_l = l.answer_segment();
    return r;
}

inline rcdpo::SftRecord random_sft_record(std::mt19937_64& rng) {
    return {oracle::random_input(rng, kImageBegin, kImageEnd, kImageEnd, kVocab),
            oracle::random_trajectory(rng, kImageEnd, kVocab, 3, 4)};
}

inline rcdpo::TokenSeq concat(std::span<const rcdpo::Token> a, std::span<const rcdpo::Token> b) {
    rcdpo::TokenSeq out(a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

// log pi(target | x ++ condition) evaluated one next_logits call at a time.
inline double loglik(const rcdpo::PolicyModel& m, const rcdpo::MultimodalInput& x, std::span<const rcdpo::Token> condition,
                     std::span<const rcdpo::Token> target) {
    return oracle::stepwise_loglik(m, concat(x.context(), condition), target);
}

// Losses of one record written out from the definitions.
struct ReferenceLosses {
    double dpo_margin, rc_margin, dpo, rc, combined;
};

inline ReferenceLosses reference_losses(const rcdpo::PolicyModel& p, const rcdpo::PolicyModel& ref,
                                        const rcdpo::PreferenceRecord& r, double beta, double lambda) {
    auto d = [&](std::span<const rcdpo::Token> cond, std::span<const rcdpo::Token> tgt) {
        return loglik(p, r.input, cond, tgt) - loglik(ref, r.input, cond, tgt);
    };
    const rcdpo::TokenSeq none;
    const double m_dpo = d(none, concat(r.cot_w, r.ans_w)) - d(none, concat(r.cot_l, r.ans_l));
    const double m_rc = d(r.cot_w, r.ans_w) - d(r.cot_l, r.ans_w);
    const double dpo = oracle::softplus(-beta * m_dpo);
    const double rc = oracle::softplus(-beta * m_rc);
    return {m_dpo, m_rc, dpo, rc, dpo + lambda * rc};
}

}  // namespace test_support
