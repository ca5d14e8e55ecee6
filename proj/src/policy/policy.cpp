#include "rcdpo/policy/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rcdpo/errors.hpp"

namespace rcdpo {

ParamGradient& ParamGradient::operator+=(const ParamGradient& other) {
    if (other.values.size() != values.size()) throw std::invalid_argument("gradient size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
    return *this;
}

ParamGradient& ParamGradient::operator*=(double scale) {
    for (double& v : values) v *= scale;
    return *this;
}

bool ParamGradient::all_finite() const noexcept {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::span<double> PolicyModel::mutable_parameters() {
    if (frozen_) throw FrozenModel("model is a frozen snapshot");
    return params_mut();
}

AttentionTensor PolicyModel::attentions(std::span<const Token>) const {
    throw Unsupported("architecture '" + architecture().value("kind", std::string("?")) +
                      "' does not expose attention");
}

std::unique_ptr<PolicyModel> PolicyModel::freeze() const {
    auto copy = clone();
    copy->frozen_ = true;
    return copy;
}

std::unique_ptr<PolicyModel> PolicyModel::trainable_copy() const {
    auto copy = clone();
    copy->frozen_ = false;
    return copy;
}

void PolicyModel::check_tokens(std::span<const Token> seq) const {
    const auto v = vocab_size();
    for (auto t : seq) {
        if (t.id >= v) {
            throw UnknownToken("token id " + std::to_string(t.id) + " >= vocabulary size " + std::to_string(v));
        }
    }
}

std::vector<double> token_logprobs(const PolicyModel& model, std::span<const Token> context,
                                   std::span<const Token> target) {
    return model.token_logprobs(context, target);
}

ParamGradient weighted_logprob_gradient(const PolicyModel& model, std::span<const LogprobTerm> terms) {
    ParamGradient grad(model.parameters().size());
    for (const auto& term : terms) {
        if (!std::isfinite(term.weight)) throw std::invalid_argument("non-finite gradient weight");
        if (term.weight == 0.0) continue;
        model.accumulate_logprob_gradient(term.context, term.target, term.weight, grad.values);
    }
    return grad;
}

AttentionTensor attentions(const PolicyModel& model, std::span<const Token> full_sequence) {
    return model.attentions(full_sequence);
}

double log_sum_exp(std::span<const double> x) {
    if (x.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

std::vector<double> log_softmax(std::span<const double> logits) {
    const double lse = log_sum_exp(logits);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

}  // namespace rcdpo
