#include "rcdpo/policy/attn_policy.hpp"

#include <cmath>
#include <random>

#include "rcdpo/errors.hpp"

namespace rcdpo {

struct AttnPolicy::Forward {
    std::size_t n = 0;
    // Residual stream per layer boundary: (layers + 1) blocks of n x d.
    std::vector<std::vector<double>> x;
    // Per layer, n x d each.
    std::vector<std::vector<double>> q, k, v, o;
    // Per layer, heads x n x n (causal rows, zero above the diagonal).
    std::vector<std::vector<double>> attn;
};

namespace {

std::size_t param_count(const AttnPolicy::Config& c) {
    const std::size_t v = c.vocab_size, d = c.d_model;
    return v * d + static_cast<std::size_t>(c.layers) * 4 * d * d + v * d + v;
}

void check_config(const AttnPolicy::Config& c) {
    if (c.vocab_size == 0 || c.d_model == 0 || c.layers == 0 || c.heads == 0) {
        throw std::invalid_argument("AttnPolicy: all dimensions must be positive");
    }
    if (c.d_model % c.heads != 0) throw std::invalid_argument("AttnPolicy: d_model must be divisible by heads");
}

// y[t] = W x[t] for all t, W is d_out x d_in row-major.
void matmul_rows(const double* w, std::size_t d_out, std::size_t d_in, const std::vector<double>& x,
                 std::size_t n, std::vector<double>& y) {
    y.assign(n * d_out, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        const double* xt = x.data() + t * d_in;
        double* yt = y.data() + t * d_out;
        for (std::size_t i = 0; i < d_out; ++i) {
            const double* wi = w + i * d_in;
            double s = 0.0;
            for (std::size_t j = 0; j < d_in; ++j) s += wi[j] * xt[j];
            yt[i] = s;
        }
    }
}

// Backward of y = W x: dW += dy x^T, dx += W^T dy.
void matmul_rows_backward(const double* w, double* dw, std::size_t d_out, std::size_t d_in,
                          const std::vector<double>& x, const std::vector<double>& dy, std::size_t n,
                          std::vector<double>& dx) {
    for (std::size_t t = 0; t < n; ++t) {
        const double* xt = x.data() + t * d_in;
        const double* dyt = dy.data() + t * d_out;
        double* dxt = dx.data() + t * d_in;
        for (std::size_t i = 0; i < d_out; ++i) {
            const double g = dyt[i];
            if (g == 0.0) continue;
            const double* wi = w + i * d_in;
            double* dwi = dw + i * d_in;
            for (std::size_t j = 0; j < d_in; ++j) {
                dwi[j] += g * xt[j];
                dxt[j] += g * wi[j];
            }
        }
    }
}

}  // namespace

AttnPolicy::AttnPolicy(const Config& config) : config_(config) {
    check_config(config_);
    params_.assign(param_count(config_), 0.0);
}

AttnPolicy::AttnPolicy(const Config& config, double init_scale, std::uint64_t seed) : AttnPolicy(config) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, init_scale);
    for (double& p : params_) p = normal(rng);
    for (std::size_t i = head_bias_offset(); i < params_.size(); ++i) params_[i] = 0.0;
}

AttnPolicy AttnPolicy::from_architecture(const nlohmann::json& arch) {
    if (arch.at("kind").get<std::string>() != "attn") throw CheckpointError("architecture kind is not 'attn'");
    Config c;
    c.vocab_size = arch.at("vocab_size").get<std::uint32_t>();
    c.d_model = arch.at("d_model").get<std::uint32_t>();
    c.layers = arch.at("layers").get<std::uint32_t>();
    c.heads = arch.at("heads").get<std::uint32_t>();
    return AttnPolicy(c);
}

nlohmann::json AttnPolicy::architecture() const {
    return {{"kind", "attn"},
            {"vocab_size", config_.vocab_size},
            {"d_model", config_.d_model},
            {"layers", config_.layers},
            {"heads", config_.heads}};
}

std::size_t AttnPolicy::embedding_offset(Token t) const noexcept {
    return static_cast<std::size_t>(t.id) * config_.d_model;
}

std::size_t AttnPolicy::query_offset(std::size_t layer) const noexcept {
    const std::size_t d = config_.d_model;
    return config_.vocab_size * d + layer * 4 * d * d;
}
std::size_t AttnPolicy::key_offset(std::size_t layer) const noexcept {
    return query_offset(layer) + config_.d_model * config_.d_model;
}
std::size_t AttnPolicy::value_offset(std::size_t layer) const noexcept {
    return query_offset(layer) + 2 * config_.d_model * config_.d_model;
}
std::size_t AttnPolicy::output_offset(std::size_t layer) const noexcept {
    return query_offset(layer) + 3 * config_.d_model * config_.d_model;
}
std::size_t AttnPolicy::head_offset() const noexcept { return query_offset(config_.layers); }
std::size_t AttnPolicy::head_bias_offset() const noexcept {
    return head_offset() + static_cast<std::size_t>(config_.vocab_size) * config_.d_model;
}

AttnPolicy::Forward AttnPolicy::forward(std::span<const Token> seq) const {
    const std::size_t n = seq.size(), d = config_.d_model, heads = config_.heads, dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Forward f;
    f.n = n;
    f.x.assign(config_.layers + 1, std::vector<double>(n * d, 0.0));
    f.q.resize(config_.layers);
    f.k.resize(config_.layers);
    f.v.resize(config_.layers);
    f.o.resize(config_.layers);
    f.attn.resize(config_.layers);
    for (std::size_t t = 0; t < n; ++t) {
        const double* e = params_.data() + embedding_offset(seq[t]);
        std::copy(e, e + d, f.x[0].begin() + static_cast<std::ptrdiff_t>(t * d));
    }
    std::vector<double> scores(n), y;
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const auto& x = f.x[l];
        matmul_rows(params_.data() + query_offset(l), d, d, x, n, f.q[l]);
        matmul_rows(params_.data() + key_offset(l), d, d, x, n, f.k[l]);
        matmul_rows(params_.data() + value_offset(l), d, d, x, n, f.v[l]);
        f.o[l].assign(n * d, 0.0);
        f.attn[l].assign(heads * n * n, 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dh;
            for (std::size_t t = 0; t < n; ++t) {
                double m = -INFINITY;
                for (std::size_t kpos = 0; kpos <= t; ++kpos) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < dh; ++i) s += f.q[l][t * d + c0 + i] * f.k[l][kpos * d + c0 + i];
                    scores[kpos] = s * scale;
                    m = std::max(m, scores[kpos]);
                }
                double z = 0.0;
                for (std::size_t kpos = 0; kpos <= t; ++kpos) {
                    scores[kpos] = std::exp(scores[kpos] - m);
                    z += scores[kpos];
                }
                double* a = f.attn[l].data() + (h * n + t) * n;
                for (std::size_t kpos = 0; kpos <= t; ++kpos) {
                    a[kpos] = scores[kpos] / z;
                    for (std::size_t i = 0; i < dh; ++i) f.o[l][t * d + c0 + i] += a[kpos] * f.v[l][kpos * d + c0 + i];
                }
            }
        }
        matmul_rows(params_.data() + output_offset(l), d, d, f.o[l], n, y);
        for (std::size_t i = 0; i < n * d; ++i) f.x[l + 1][i] = x[i] + y[i];
    }
    return f;
}

std::vector<double> AttnPolicy::head_logits(const Forward& f, std::size_t position) const {
    const std::size_t d = config_.d_model, v = config_.vocab_size;
    const double* h = f.x.back().data() + position * d;
    const double* w = params_.data() + head_offset();
    const double* b = params_.data() + head_bias_offset();
    std::vector<double> logits(v);
    for (std::size_t r = 0; r < v; ++r) {
        double s = b[r];
        for (std::size_t j = 0; j < d; ++j) s += w[r * d + j] * h[j];
        logits[r] = s;
    }
    return logits;
}

std::vector<double> AttnPolicy::next_logits(std::span<const Token> context) const {
    if (context.empty()) throw std::invalid_argument("context must be non-empty");
    check_tokens(context);
    const auto f = forward(context);
    return head_logits(f, context.size() - 1);
}

std::vector<double> AttnPolicy::token_logprobs(std::span<const Token> context, std::span<const Token> target) const {
    if (context.empty()) throw std::invalid_argument("context must be non-empty");
    check_tokens(context);
    check_tokens(target);
    TokenSeq seq(context.begin(), context.end());
    seq.insert(seq.end(), target.begin(), target.end());
    const auto f = forward(seq);
    std::vector<double> out(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        const auto logits = head_logits(f, context.size() + i - 1);
        out[i] = logits[target[i].id] - log_sum_exp(logits);
    }
    return out;
}

void AttnPolicy::accumulate_logprob_gradient(std::span<const Token> context, std::span<const Token> target,
                                             double weight, std::span<double> grad) const {
    if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer size mismatch");
    if (context.empty()) throw std::invalid_argument("context must be non-empty");
    check_tokens(context);
    check_tokens(target);
    if (target.empty()) return;
    const std::size_t d = config_.d_model, v = config_.vocab_size, heads = config_.heads, dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    TokenSeq seq(context.begin(), context.end());
    seq.insert(seq.end(), target.begin(), target.end());
    const std::size_t n = seq.size();
    const auto f = forward(seq);

    // Output head.
    std::vector<double> dx(n * d, 0.0);
    const double* w_out = params_.data() + head_offset();
    double* dw_out = grad.data() + head_offset();
    double* db_out = grad.data() + head_bias_offset();
    for (std::size_t i = 0; i < target.size(); ++i) {
        const std::size_t pos = context.size() + i - 1;
        const auto logits = head_logits(f, pos);
        const double lse = log_sum_exp(logits);
        const double* h = f.x.back().data() + pos * d;
        double* dh_pos = dx.data() + pos * d;
        for (std::size_t r = 0; r < v; ++r) {
            double g = -std::exp(logits[r] - lse);
            if (r == target[i].id) g += 1.0;
            g *= weight;
            db_out[r] += g;
            for (std::size_t j = 0; j < d; ++j) {
                dw_out[r * d + j] += g * h[j];
                dh_pos[j] += g * w_out[r * d + j];
            }
        }
    }

    // Attention layers, last to first. `dx` holds dL/dx_{l+1} on entry.
    std::vector<double> d_o, dq, dk, dv, da(n);
    for (std::size_t l = config_.layers; l-- > 0;) {
        const auto& x = f.x[l];
        // Residual: dL/dx_l starts as a copy of dL/dx_{l+1}.
        std::vector<double> dx_prev = dx;
        d_o.assign(n * d, 0.0);
        matmul_rows_backward(params_.data() + output_offset(l), grad.data() + output_offset(l), d, d, f.o[l], dx, n,
                             d_o);
        dq.assign(n * d, 0.0);
        dk.assign(n * d, 0.0);
        dv.assign(n * d, 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dh;
            for (std::size_t t = 0; t < n; ++t) {
                const double* a = f.attn[l].data() + (h * n + t) * n;
                double dot = 0.0;
                for (std::size_t kpos = 0; kpos <= t; ++kpos) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < dh; ++i) {
                        s += d_o[t * d + c0 + i] * f.v[l][kpos * d + c0 + i];
                        dv[kpos * d + c0 + i] += a[kpos] * d_o[t * d + c0 + i];
                    }
                    da[kpos] = s;
                    dot += a[kpos] * s;
                }
                for (std::size_t kpos = 0; kpos <= t; ++kpos) {
                    const double ds = a[kpos] * (da[kpos] - dot) * scale;
                    for (std::size_t i = 0; i < dh; ++i) {
                        dq[t * d + c0 + i] += ds * f.k[l][kpos * d + c0 + i];
                        dk[kpos * d + c0 + i] += ds * f.q[l][t * d + c0 + i];
                    }
                }
            }
        }
        matmul_rows_backward(params_.data() + query_offset(l), grad.data() + query_offset(l), d, d, x, dq, n, dx_prev);
        matmul_rows_backward(params_.data() + key_offset(l), grad.data() + key_offset(l), d, d, x, dk, n, dx_prev);
        matmul_rows_backward(params_.data() + value_offset(l), grad.data() + value_offset(l), d, d, x, dv, n, dx_prev);
        dx = std::move(dx_prev);
    }

    for (std::size_t t = 0; t < n; ++t) {
        double* de = grad.data() + embedding_offset(seq[t]);
        for (std::size_t j = 0; j < d; ++j) de[j] += dx[t * d + j];
    }
}

AttentionTensor AttnPolicy::attentions(std::span<const Token> sequence) const {
    if (sequence.empty()) throw std::invalid_argument("sequence must be non-empty");
    check_tokens(sequence);
    const auto f = forward(sequence);
    const std::size_t n = sequence.size();
    AttentionTensor out(config_.layers, config_.heads, n);
    for (std::size_t l = 0; l < config_.layers; ++l) {
        for (std::size_t h = 0; h < config_.heads; ++h) {
            for (std::size_t t = 0; t < n; ++t) {
                auto row = out.row(l, h, t);
                const double* a = f.attn[l].data() + (h * n + t) * n;
                std::copy(a, a + n, row.begin());
            }
        }
    }
    return out;
}

std::unique_ptr<PolicyModel> AttnPolicy::clone() const { return std::make_unique<AttnPolicy>(*this); }

}  // namespace rcdpo
