#pragma once

#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "rcdpo/core/trajectory.hpp"
#include "rcdpo/policy/policy.hpp"

namespace rcdpo {

/// -log sigmoid(z) = softplus(-z), stable for any finite z.
double neg_log_sigmoid(double z) noexcept;
/// d/dm of -log sigmoid(beta * m): -beta * sigmoid(-beta * m).
double neg_log_sigmoid_slope(double beta, double m) noexcept;

/// sum_i log p(target_i | image ++ prompt ++ condition ++ target_<i).
double seq_loglik(const PolicyModel& model, const MultimodalInput& x, std::span<const Token> condition,
                  std::span<const Token> target);

struct SftLoss {
    double loss = 0.0;
    ParamGradient grad;  // gradient of `loss`
};

/// -mean log pi(c, a | x) over the batch.
SftLoss sft_loss(const PolicyModel& model, std::span<const SftRecord> batch);

/// The four sequence log-likelihoods one model contributes to a record.
struct RecordLogliks {
    double joint_w = 0.0;     // log pi(c_w, a_w | x)
    double joint_l = 0.0;     // log pi(c_l, a_l | x)
    double ans_w_cw = 0.0;    // log pi(a_w | x, c_w)
    double ans_w_cl = 0.0;    // log pi(a_w | x, c_l)
};

struct LossBreakdown {
    double dpo_loss = 0.0;
    double rc_loss = 0.0;
    double combined = 0.0;
    double dpo_margin = 0.0;
    double rc_margin = 0.0;
    RecordLogliks policy;
    RecordLogliks ref;
};

/// Margins and losses from the eight scalar log-likelihoods.
LossBreakdown breakdown_from_logliks(const RecordLogliks& policy, const RecordLogliks& ref, double beta,
                                     double lambda_rc);

struct Response {
    std::span<const Token> cot;
    std::span<const Token> answer;
};

/// Response-level term. Fills dpo_* and the joint log-likelihoods.
LossBreakdown dpo_loss(const PolicyModel& policy, const PolicyModel& ref, const MultimodalInput& x,
                       Response chosen, Response rejected, double beta);

/// Reasoning-conditioned term: a_w under c_w versus under c_l. Fills rc_*
/// and the conditional log-likelihoods. Throws SameCondition if cot_w == cot_l.
LossBreakdown rc_loss(const PolicyModel& policy, const PolicyModel& ref, const MultimodalInput& x,
                      std::span<const Token> cot_w, std::span<const Token> cot_l, std::span<const Token> ans_w,
                      double beta);

struct CombinedLoss {
    LossBreakdown breakdown;
    ParamGradient grad;  // gradient of breakdown.combined w.r.t. the policy
};

CombinedLoss combined_loss(const PolicyModel& policy, const PolicyModel& ref, const PreferenceRecord& record,
                           double beta, double lambda_rc);

struct BatchLoss {
    LossBreakdown mean;                   // field-wise mean over records
    ParamGradient grad;                   // gradient of mean.combined
    std::vector<LossBreakdown> records;
};

BatchLoss combined_batch_loss(const PolicyModel& policy, const PolicyModel& ref,
                              std::span<const PreferenceRecord> batch, double beta, double lambda_rc);

/// Response-level objective alone, with its gradient (the lambda = 0 baseline).
CombinedLoss response_dpo_loss(const PolicyModel& policy, const PolicyModel& ref, const PreferenceRecord& record,
                               double beta);
BatchLoss dpo_batch_loss(const PolicyModel& policy, const PolicyModel& ref, std::span<const PreferenceRecord> batch,
                         double beta);

struct DecompositionGap {
    double chain_rule = 0.0;  // |log pi(c,a|x) - log pi(c|x) - log pi(a|x,c)|, worst of the pair
    double response = 0.0;    // residual of splitting the pair's response ratio into CoT and answer ratios
};

/// Chain-rule residual for one trajectory.
double chain_rule_gap(const PolicyModel& model, const MultimodalInput& x, std::span<const Token> cot,
                      std::span<const Token> answer);

DecompositionGap decomposition_gap(const PolicyModel& model, const MultimodalInput& x, Response w, Response l);

/// Policy-minus-reference log-likelihood gaps of one record, split by segment:
///   cot    = [d(c_w) - d(c_l)],  answer = [d(a_w | c_w) - d(a_l | c_l)]
/// with d = log pi_theta - log pi_ref. cot + answer equals the DPO margin.
struct SegmentGap {
    double cot = 0.0;
    double answer = 0.0;
};

SegmentGap segment_gap(const PolicyModel& policy, const PolicyModel& ref, const PreferenceRecord& record);

/// Mean segment gaps over `records`; one point of the diagnostic series.
SegmentGap segment_loss_ratio(const PolicyModel& policy, const PolicyModel& ref,
                              std::span<const PreferenceRecord> records);

struct DiagnosticPoint {
    std::size_t step = 0;
    SegmentGap ratio;
    double dpo_loss = 0.0;
    double rc_loss = 0.0;
    double combined = 0.0;
};

/// CSV: step,cot_ratio,answer_ratio,dpo_loss,rc_loss,combined
void write_diagnostic_csv(std::ostream& out, std::span<const DiagnosticPoint> series);

}  // namespace rcdpo
