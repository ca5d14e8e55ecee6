#include "rcdpo/losses/losses.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "rcdpo/errors.hpp"

namespace rcdpo {

namespace {

TokenSeq concat(std::span<const Token> a, std::span<const Token> b) {
    TokenSeq out(a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

void require_frozen(const PolicyModel& ref) {
    if (!ref.frozen()) throw std::invalid_argument("reference model must be a frozen snapshot");
}

void check_beta(double beta) {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be positive");
}

double sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double joint(const PolicyModel& m, const MultimodalInput& x, std::span<const Token> cot,
             std::span<const Token> ans) {
    const TokenSeq r = concat(cot, ans);
    return seq_loglik(m, x, {}, r);
}

RecordLogliks record_logliks(const PolicyModel& m, const PreferenceRecord& r) {
    RecordLogliks out;
    out.joint_w = joint(m, r.input, r.cot_w, r.ans_w);
    out.joint_l = joint(m, r.input, r.cot_l, r.ans_l);
    out.ans_w_cw = seq_loglik(m, r.input, r.cot_w, r.ans_w);
    out.ans_w_cl = seq_loglik(m, r.input, r.cot_l, r.ans_w);
    return out;
}

}  // namespace

double neg_log_sigmoid(double z) noexcept {
    // softplus(-z) = max(-z, 0) + log1p(exp(-|z|))
    return std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double neg_log_sigmoid_slope(double beta, double m) noexcept { return -beta * sigmoid(-beta * m); }

double seq_loglik(const PolicyModel& model, const MultimodalInput& x, std::span<const Token> condition,
                  std::span<const Token> target) {
    if (target.empty()) throw std::invalid_argument("seq_loglik target must be non-empty");
    TokenSeq ctx = x.context();
    ctx.insert(ctx.end(), condition.begin(), condition.end());
    double s = 0.0;
    for (double lp : model.token_logprobs(ctx, target)) s += lp;
    return s;
}

SftLoss sft_loss(const PolicyModel& model, std::span<const SftRecord> batch) {
    if (batch.empty()) throw std::invalid_argument("sft_loss batch must be non-empty");
    const double w = -1.0 / static_cast<double>(batch.size());
    SftLoss out{0.0, ParamGradient(model.parameters().size())};
    for (const auto& r : batch) {
        const TokenSeq ctx = r.input.context();
        const TokenSeq target = r.trajectory.response_tokens();
        double ll = 0.0;
        for (double lp : model.token_logprobs(ctx, target)) ll += lp;
        out.loss += w * ll;
        model.accumulate_logprob_gradient(ctx, target, w, out.grad.values);
    }
    return out;
}

LossBreakdown breakdown_from_logliks(const RecordLogliks& policy, const RecordLogliks& ref, double beta,
                                     double lambda_rc) {
    LossBreakdown b;
    b.policy = policy;
    b.ref = ref;
    b.dpo_margin = (policy.joint_w - ref.joint_w) - (policy.joint_l - ref.joint_l);
    b.rc_margin = (policy.ans_w_cw - ref.ans_w_cw) - (policy.ans_w_cl - ref.ans_w_cl);
    b.dpo_loss = neg_log_sigmoid(beta * b.dpo_margin);
    b.rc_loss = neg_log_sigmoid(beta * b.rc_margin);
    b.combined = b.dpo_loss + lambda_rc * b.rc_loss;
    return b;
}

LossBreakdown dpo_loss(const PolicyModel& policy, const PolicyModel& ref, const MultimodalInput& x,
                       Response chosen, Response rejected, double beta) {
    check_beta(beta);
    require_frozen(ref);
    LossBreakdown b;
    b.policy.joint_w = joint(policy, x, chosen.cot, chosen.answer);
    b.policy.joint_l = joint(policy, x, rejected.cot, rejected.answer);
    b.ref.joint_w = joint(ref, x, chosen.cot, chosen.answer);
    b.ref.joint_l = joint(ref, x, rejected.cot, rejected.answer);
    b.dpo_margin = (b.policy.joint_w - b.ref.joint_w) - (b.policy.joint_l - b.ref.joint_l);
    b.dpo_loss = neg_log_sigmoid(beta * b.dpo_margin);
    b.combined = b.dpo_loss;
    return b;
}

LossBreakdown rc_loss(const PolicyModel& policy, const PolicyModel& ref, const MultimodalInput& x,
                      std::span<const Token> cot_w, std::span<const Token> cot_l, std::span<const Token> ans_w,
                      double beta) {
    check_beta(beta);
    require_frozen(ref);
    if (std::equal(cot_w.begin(), cot_w.end(), cot_l.begin(), cot_l.end())) {
        throw SameCondition("cot_w equals cot_l");
    }
    LossBreakdown b;
    b.policy.ans_w_cw = seq_loglik(policy, x, cot_w, ans_w);
    b.policy.ans_w_cl = seq_loglik(policy, x, cot_l, ans_w);
    b.ref.ans_w_cw = seq_loglik(ref, x, cot_w, ans_w);
    b.ref.ans_w_cl = seq_loglik(ref, x, cot_l, ans_w);
    b.rc_margin = (b.policy.ans_w_cw - b.ref.ans_w_cw) - (b.policy.ans_w_cl - b.ref.ans_w_cl);
    b.rc_loss = neg_log_sigmoid(beta * b.rc_margin);
    b.combined = b.rc_loss;
    return b;
}

CombinedLoss combined_loss(const PolicyModel& policy, const PolicyModel& ref, const PreferenceRecord& record,
                           double beta, double lambda_rc) {
    check_beta(beta);
    require_frozen(ref);
    if (!(lambda_rc >= 0.0)) throw std::invalid_argument("lambda_rc must be >= 0");
    if (record.cot_w == record.cot_l) throw SameCondition("cot_w equals cot_l");

    CombinedLoss out;
    out.breakdown = breakdown_from_logliks(record_logliks(policy, record), record_logliks(ref, record), beta,
                                           lambda_rc);
    const double g_dpo = neg_log_sigmoid_slope(beta, out.breakdown.dpo_margin);
    const double g_rc = lambda_rc * neg_log_sigmoid_slope(beta, out.breakdown.rc_margin);

    const TokenSeq x = record.input.context();
    const TokenSeq resp_w = concat(record.cot_w, record.ans_w);
    const TokenSeq resp_l = concat(record.cot_l, record.ans_l);
    const TokenSeq ctx_w = concat(x, record.cot_w);
    const TokenSeq ctx_l = concat(x, record.cot_l);
    const LogprobTerm terms[] = {
        {x, resp_w, g_dpo},
        {x, resp_l, -g_dpo},
        {ctx_w, record.ans_w, g_rc},
        {ctx_l, record.ans_w, -g_rc},
    };
    out.grad = weighted_logprob_gradient(policy, terms);
    return out;
}

namespace {

void accumulate_mean(LossBreakdown& m, const LossBreakdown& b, double inv) {
    m.dpo_loss += inv * b.dpo_loss;
    m.rc_loss += inv * b.rc_loss;
    m.combined += inv * b.combined;
    m.dpo_margin += inv * b.dpo_margin;
    m.rc_margin += inv * b.rc_margin;
    for (auto [dst, src] : {std::pair{&m.policy, &b.policy}, std::pair{&m.ref, &b.ref}}) {
        dst->joint_w += inv * src->joint_w;
        dst->joint_l += inv * src->joint_l;
        dst->ans_w_cw += inv * src->ans_w_cw;
        dst->ans_w_cl += inv * src->ans_w_cl;
    }
}

template <class PerRecord>
BatchLoss batch_loss(const PolicyModel& policy, std::span<const PreferenceRecord> batch, PerRecord per_record) {
    if (batch.empty()) throw std::invalid_argument("batch must be non-empty");
    BatchLoss out;
    out.grad = ParamGradient(policy.parameters().size());
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto& r : batch) {
        CombinedLoss c = per_record(r);
        c.grad *= inv;
        out.grad += c.grad;
        accumulate_mean(out.mean, c.breakdown, inv);
        out.records.push_back(c.breakdown);
    }
    return out;
}

}  // namespace

BatchLoss combined_batch_loss(const PolicyModel& policy, const PolicyModel& ref,
                              std::span<const PreferenceRecord> batch, double beta, double lambda_rc) {
    return batch_loss(policy, batch,
                      [&](const PreferenceRecord& r) { return combined_loss(policy, ref, r, beta, lambda_rc); });
}

CombinedLoss response_dpo_loss(const PolicyModel& policy, const PolicyModel& ref, const PreferenceRecord& record,
                               double beta) {
    CombinedLoss out;
    out.breakdown = dpo_loss(policy, ref, record.input, {record.cot_w, record.ans_w}, {record.cot_l, record.ans_l},
                             beta);
    const double g = neg_log_sigmoid_slope(beta, out.breakdown.dpo_margin);
    const TokenSeq x = record.input.context();
    const TokenSeq resp_w = concat(record.cot_w, record.ans_w);
    const TokenSeq resp_l = concat(record.cot_l, record.ans_l);
    const LogprobTerm terms[] = {{x, resp_w, g}, {x, resp_l, -g}};
    out.grad = weighted_logprob_gradient(policy, terms);
    return out;
}

BatchLoss dpo_batch_loss(const PolicyModel& policy, const PolicyModel& ref, std::span<const PreferenceRecord> batch,
                         double beta) {
    return batch_loss(policy, batch, [&](const PreferenceRecord& r) { return response_dpo_loss(policy, ref, r, beta); });
}

double chain_rule_gap(const PolicyModel& model, const MultimodalInput& x, std::span<const Token> cot,
                      std::span<const Token> answer) {
    const double full = joint(model, x, cot, answer);
    const double c = seq_loglik(model, x, {}, cot);
    const double a = seq_loglik(model, x, cot, answer);
    return std::abs(full - c - a);
}

DecompositionGap decomposition_gap(const PolicyModel& model, const MultimodalInput& x, Response w, Response l) {
    DecompositionGap g;
    g.chain_rule = std::max(chain_rule_gap(model, x, w.cot, w.answer), chain_rule_gap(model, x, l.cot, l.answer));
    const double lhs = joint(model, x, w.cot, w.answer) - joint(model, x, l.cot, l.answer);
    const double cot_term = seq_loglik(model, x, {}, w.cot) - seq_loglik(model, x, {}, l.cot);
    const double ans_term = seq_loglik(model, x, w.cot, w.answer) - seq_loglik(model, x, l.cot, l.answer);
    g.response = std::abs(lhs - cot_term - ans_term);
    return g;
}

SegmentGap segment_gap(const PolicyModel& policy, const PolicyModel& ref, const PreferenceRecord& r) {
    require_frozen(ref);
    auto d_cot = [&](std::span<const Token> cot) {
        return seq_loglik(policy, r.input, {}, cot) - seq_loglik(ref, r.input, {}, cot);
    };
    auto d_ans = [&](std::span<const Token> cot, std::span<const Token> ans) {
        return seq_loglik(policy, r.input, cot, ans) - seq_loglik(ref, r.input, cot, ans);
    };
    return {d_cot(r.cot_w) - d_cot(r.cot_l), d_ans(r.cot_w, r.ans_w) - d_ans(r.cot_l, r.ans_l)};
}

SegmentGap segment_loss_ratio(const PolicyModel& policy, const PolicyModel& ref,
                              std::span<const PreferenceRecord> records) {
    SegmentGap out;
    if (records.empty()) return out;
    for (const auto& r : records) {
        const auto g = segment_gap(policy, ref, r);
        out.cot += g.cot;
        out.answer += g.answer;
    }
    out.cot /= static_cast<double>(records.size());
    out.answer /= static_cast<double>(records.size());
    return out;
}

void write_diagnostic_csv(std::ostream& out, std::span<const DiagnosticPoint> series) {
    out << "step,cot_ratio,answer_ratio,dpo_loss,rc_loss,combined\n";
    const auto old = out.precision(17);
    for (const auto& p : series) {
        out << p.step << ',' << p.ratio.cot << ',' << p.ratio.answer << ',' << p.dpo_loss << ',' << p.rc_loss
            << ',' << p.combined << '\n';
    }
    out.precision(old);
}

}  // namespace rcdpo
