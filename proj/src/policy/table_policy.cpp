#include "rcdpo/policy/table_policy.hpp"

#include <cmath>
#include <random>

#include "rcdpo/errors.hpp"

namespace rcdpo {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::size_t param_count(const TablePolicy::Config& c) {
    const std::size_t v = c.vocab_size;
    return v * v + static_cast<std::size_t>(c.buckets) * v + v * v;
}

void check_config(const TablePolicy::Config& c) {
    if (c.vocab_size == 0) throw std::invalid_argument("TablePolicy: vocab_size must be positive");
    if (c.buckets == 0) throw std::invalid_argument("TablePolicy: buckets must be positive");
    if (c.image_begin > c.image_end || c.image_end > c.vocab_size) {
        throw std::invalid_argument("TablePolicy: invalid image id range");
    }
}

}  // namespace

TablePolicy::TablePolicy(const Config& config) : config_(config) {
    check_config(config_);
    params_.assign(param_count(config_), 0.0);
}

TablePolicy::TablePolicy(const Config& config, double init_scale, std::uint64_t seed) : TablePolicy(config) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, init_scale);
    for (double& p : params_) p = normal(rng);
}

TablePolicy TablePolicy::from_architecture(const nlohmann::json& arch) {
    if (arch.at("kind").get<std::string>() != "table") throw CheckpointError("architecture kind is not 'table'");
    Config c;
    c.vocab_size = arch.at("vocab_size").get<std::uint32_t>();
    c.buckets = arch.at("buckets").get<std::uint32_t>();
    c.image_begin = arch.at("image_begin").get<std::uint32_t>();
    c.image_end = arch.at("image_end").get<std::uint32_t>();
    return TablePolicy(c);
}

nlohmann::json TablePolicy::architecture() const {
    return {{"kind", "table"},
            {"vocab_size", config_.vocab_size},
            {"buckets", config_.buckets},
            {"image_begin", config_.image_begin},
            {"image_end", config_.image_end}};
}

std::uint32_t TablePolicy::context_bucket(std::span<const Token> context) const noexcept {
    std::uint64_t h = kFnvOffset;
    for (auto t : context) {
        if (t.id < config_.image_begin || t.id >= config_.image_end) break;
        for (int byte = 0; byte < 4; ++byte) {
            h ^= (t.id >> (8 * byte)) & 0xffU;
            h *= kFnvPrime;
        }
    }
    return static_cast<std::uint32_t>(h % config_.buckets);
}

std::size_t TablePolicy::transition_offset(Token prev, Token next) const noexcept {
    return static_cast<std::size_t>(prev.id) * config_.vocab_size + next.id;
}

std::size_t TablePolicy::bucket_offset(std::uint32_t bucket, Token next) const noexcept {
    const std::size_t v = config_.vocab_size;
    return v * v + static_cast<std::size_t>(bucket) * v + next.id;
}

std::size_t TablePolicy::context_offset(Token seen, Token next) const noexcept {
    const std::size_t v = config_.vocab_size;
    return v * v + static_cast<std::size_t>(config_.buckets) * v + static_cast<std::size_t>(seen.id) * v + next.id;
}

std::vector<std::vector<double>> TablePolicy::position_logits(std::span<const Token> seq, std::size_t first) const {
    // Logits for every position p in [first, |seq|]; position p predicts seq[p].
    const std::size_t v = config_.vocab_size;
    const std::uint32_t bucket = context_bucket(seq);
    std::vector<double> bag(v, 0.0);
    std::vector<std::vector<double>> out;
    out.reserve(seq.size() + 1 - first);
    for (std::size_t p = 1; p <= seq.size(); ++p) {
        const double* seen = params_.data() + context_offset(seq[p - 1], Token{0});
        for (std::size_t k = 0; k < v; ++k) bag[k] += seen[k];
        if (p < first) continue;
        const double* trans = params_.data() + transition_offset(seq[p - 1], Token{0});
        const double* buck = params_.data() + bucket_offset(bucket, Token{0});
        std::vector<double> logits(v);
        const double inv = 1.0 / static_cast<double>(p);
        for (std::size_t k = 0; k < v; ++k) logits[k] = trans[k] + buck[k] + bag[k] * inv;
        out.push_back(std::move(logits));
    }
    return out;
}

std::vector<double> TablePolicy::next_logits(std::span<const Token> context) const {
    if (context.empty()) throw std::invalid_argument("context must be non-empty");
    check_tokens(context);
    return std::move(position_logits(context, context.size()).back());
}

std::vector<double> TablePolicy::token_logprobs(std::span<const Token> context, std::span<const Token> target) const {
    if (context.empty()) throw std::invalid_argument("context must be non-empty");
    check_tokens(context);
    check_tokens(target);
    TokenSeq seq(context.begin(), context.end());
    seq.insert(seq.end(), target.begin(), target.end());
    const auto logits = position_logits(seq, context.size());
    std::vector<double> out(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        out[i] = logits[i][target[i].id] - log_sum_exp(logits[i]);
    }
    return out;
}

void TablePolicy::accumulate_logprob_gradient(std::span<const Token> context, std::span<const Token> target,
                                              double weight, std::span<double> grad) const {
    if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer size mismatch");
    if (context.empty()) throw std::invalid_argument("context must be non-empty");
    check_tokens(context);
    check_tokens(target);
    if (target.empty()) return;
    const std::size_t v = config_.vocab_size;
    TokenSeq seq(context.begin(), context.end());
    seq.insert(seq.end(), target.begin(), target.end());
    const std::size_t first = context.size();
    const auto logits = position_logits(seq, first);
    const std::uint32_t bucket = context_bucket(seq);

    // d log p(s_p) / d logits = onehot(s_p) - softmax. The context table at
    // token s_j receives the sum of these over all later positions, scaled 1/p.
    std::vector<double> suffix(v, 0.0);
    std::vector<double> g(v);
    for (std::size_t p = seq.size() - 1; p >= 1; --p) {
        if (p >= first) {
            const auto& lg = logits[p - first];
            const double lse = log_sum_exp(lg);
            for (std::size_t k = 0; k < v; ++k) g[k] = -std::exp(lg[k] - lse);
            g[seq[p].id] += 1.0;
            double* trans = grad.data() + transition_offset(seq[p - 1], Token{0});
            double* buck = grad.data() + bucket_offset(bucket, Token{0});
            const double scale = weight / static_cast<double>(p);
            for (std::size_t k = 0; k < v; ++k) {
                trans[k] += weight * g[k];
                buck[k] += weight * g[k];
                suffix[k] += scale * g[k];
            }
        }
        double* seen = grad.data() + context_offset(seq[p - 1], Token{0});
        for (std::size_t k = 0; k < v; ++k) seen[k] += suffix[k];
    }
}

std::unique_ptr<PolicyModel> TablePolicy::clone() const { return std::make_unique<TablePolicy>(*this); }

}  // namespace rcdpo
