#include "rcdpo/pipeline/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <optional>
#include <thread>

#include <spdlog/spdlog.h>

#include "rcdpo/core/format.hpp"
#include "rcdpo/core/rng.hpp"
#include "rcdpo/errors.hpp"
#include "rcdpo/mcts/mcts.hpp"
#include "rcdpo/policy/attn_policy.hpp"
#include "rcdpo/policy/sampling.hpp"
#include "rcdpo/policy/table_policy.hpp"
#include "rcdpo/pruner/pruner.hpp"

namespace rcdpo {

namespace {

class Sgd final : public Optimizer {
public:
    void step(std::span<double> params, const ParamGradient& grad, double lr) override {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad.values[i];
    }
};

class Adam final : public Optimizer {
public:
    Adam(const OptimizerConfig& c, std::size_t n) : c_(c), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<double> params, const ParamGradient& grad, double lr) override {
        ++t_;
        const double b1t = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
        const double b2t = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grad.values[i];
            m_[i] = c_.beta1 * m_[i] + (1.0 - c_.beta1) * g;
            v_[i] = c_.beta2 * v_[i] + (1.0 - c_.beta2) * g * g;
            params[i] -= lr * (m_[i] / b1t) / (std::sqrt(v_[i] / b2t) + c_.epsilon);
        }
    }

private:
    OptimizerConfig c_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

void check_finite(double loss, const ParamGradient& grad, const char* what) {
    if (!std::isfinite(loss) || !grad.all_finite()) {
        throw DivergenceDetected(std::string(what) + ": loss or gradient became non-finite");
    }
}

template <class T>
std::vector<T> gather(std::span<const T> data, std::span<const std::size_t> idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(data[i]);
    return out;
}

}  // namespace

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config, std::size_t num_params) {
    if (config.kind == "sgd") return std::make_unique<Sgd>();
    if (config.kind == "adam") return std::make_unique<Adam>(config, num_params);
    throw ConfigInvalid("unknown optimizer '" + config.kind + "'");
}

std::unique_ptr<PolicyModel> init_policy(const PolicyConfig& config, const Vocabulary& vocab, std::uint64_t seed) {
    if (config.architecture == "table") {
        TablePolicy::Config c{vocab.size(), config.buckets, vocab.image_begin(), vocab.image_end()};
        return std::make_unique<TablePolicy>(c, config.init_scale, seed);
    }
    if (config.architecture == "attn") {
        AttnPolicy::Config c{vocab.size(), config.d_model, config.layers, config.heads};
        return std::make_unique<AttnPolicy>(c, config.init_scale, seed);
    }
    throw ConfigInvalid("unknown architecture '" + config.architecture + "'");
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

SftStats fit_sft(PolicyModel& model, std::span<const SftRecord> dataset, std::size_t epochs, double lr,
                 std::size_t batch_size, const OptimizerConfig& optimizer, std::uint64_t seed) {
    if (dataset.empty()) throw std::invalid_argument("SFT dataset must be non-empty");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    SftStats stats;
    stats.initial_loss = sft_loss(model, dataset).loss;
    auto opt = make_optimizer(optimizer, model.parameters().size());
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const auto order = shuffled_indices(dataset.size(), derive_seed(seed, epoch));
        for (std::size_t b = 0; b < order.size(); b += batch_size) {
            const auto idx = std::span(order).subspan(b, std::min(batch_size, order.size() - b));
            const auto batch = gather(dataset, idx);
            auto step = sft_loss(model, batch);
            check_finite(step.loss, step.grad, "sft");
            stats.step_losses.push_back(step.loss);
            opt->step(model.mutable_parameters(), step.grad, lr);
        }
    }
    stats.final_loss = sft_loss(model, dataset).loss;
    if (!std::isfinite(stats.final_loss)) throw DivergenceDetected("sft: final loss is non-finite");
    return stats;
}

SftWarmup sft_warmup(const PolicyModel& policy, std::span<const SftRecord> dataset, const TrainConfig& config,
                     std::uint64_t seed) {
    auto model = policy.trainable_copy();
    SftWarmup out;
    out.stats = fit_sft(*model, dataset, config.sft_epochs, config.hyper.sft_lr, config.hyper.batch_size,
                        config.optimizer, seed);
    out.model = model->freeze();
    return out;
}

SftDataset build_sft_dataset(const PolicyModel& policy, const Vocabulary& vocab,
                             std::span<const MultimodalInput> inputs, const TrainConfig& config, std::uint64_t seed) {
    struct Slot {
        std::optional<SftRecord> record;
        std::string reason;
        std::size_t attempts = 0;
    };
    std::vector<Slot> slots(inputs.size());
    parallel_for(inputs.size(), config.workers, [&](std::size_t i) {
        Rng rng(derive_seed(seed, i));
        Slot& slot = slots[i];
        for (std::size_t a = 0; a <= config.decode.sft_retries; ++a) {
            ++slot.attempts;
            const TokenSeq response = sample_free(policy, inputs[i], config.decode.temperature, rng,
                                                  config.decode.limits.max_response_tokens);
            try {
                Trajectory t = parse_response(render_tokens(response, vocab), vocab);
                if (!t.complete()) {
                    slot.reason = "incomplete trajectory";
                    continue;
                }
                SftRecord r{inputs[i], std::move(t)};
                r.validate(vocab.size());
                slot.record = std::move(r);
                return;
            } catch (const std::exception& e) {
                slot.reason = e.what();
            }
        }
    });
    SftDataset out;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        out.attempts += slots[i].attempts;
        if (slots[i].record) {
            out.records.push_back(std::move(*slots[i].record));
        } else {
            out.skipped.push_back("input " + std::to_string(i) + ": " + slots[i].reason);
            spdlog::info("build_sft_dataset: skipped input {}: {}", i, slots[i].reason);
        }
    }
    return out;
}

PreferenceBuild construct_preferences(const PolicyModel& sft, const Vocabulary& vocab,
                                      std::span<const MultimodalInput> inputs, const Verifier& verifier,
                                      const TrainConfig& config, std::uint64_t seed) {
    if (!sft.frozen()) throw std::invalid_argument("construct_preferences expects a frozen SFT model");
    if (!(config.hyper.prune_ratio > 0.0)) throw ConfigInvalid("prune_ratio must be > 0 to build negatives");
    const StructuredDecoder decoder(sft, vocab, config.decode.limits);
    SearchOptions options;
    options.mode = config.search.mode == "enumerate" ? ExpandMode::kEnumerate : ExpandMode::kSample;
    options.temperature = config.decode.temperature;
    options.limits = config.decode.limits;
    options.expand_attempts = config.search.expand_attempts;
    options.normalize_reward = config.search.normalize_reward;

    struct Slot {
        std::optional<PreferenceRecord> record;
        std::string reason;
        double positive = 0.0;
        double sampled = 0.0;
    };
    std::vector<Slot> slots(inputs.size());
    parallel_for(inputs.size(), config.workers, [&](std::size_t i) {
        const MultimodalInput& x = inputs[i];
        Slot& slot = slots[i];
        const std::uint64_t s = derive_seed(seed, i);
        SearchResult best;
        try {
            best = search(x, decoder, verifier, config.hyper, s, options);
        } catch (const RolloutOverflow& e) {
            slot.reason = std::string("search failed: ") + e.what();
            return;
        }
        if (best.score <= 0.0) {
            slot.reason = "best search score is 0";
            return;
        }
        Rng rng(splitmix64(s));
        std::optional<Trajectory> sampled;
        for (std::size_t a = 0; a <= config.decode.sft_retries && !sampled; ++a) {
            try {
                sampled = decoder.complete(x, {}, config.hyper.max_depth, config.decode.temperature, rng);
            } catch (const RolloutOverflow&) {
            }
        }
        if (!sampled) {
            slot.reason = "sampled response overflowed the token budget";
            return;
        }
        const TokenSeq cot = sampled->cot_tokens();
        const TokenSeq ans = sampled->answer_segment();
        const PruneReport report = prune_response(sft, vocab, x, cot, ans, config.hyper.prune_ratio);
        const TokenSeq cot_w = best.trajectory.cot_tokens();
        if (report.corrupted.size() <= 2) {
            slot.reason = "pruning removed every reasoning step";
            return;
        }
        if (report.corrupted == cot_w) {
            slot.reason = "corrupted CoT equals the positive CoT";
            return;
        }
        PreferenceRecord r;
        r.input = x;
        r.cot_w = cot_w;
        r.ans_w = best.trajectory.answer_segment();
        r.cot_l = report.corrupted;
        r.ans_l = config.negative_answer == "positive" ? r.ans_w : ans;
        r.validate(vocab.size());
        slot.positive = best.score;
        slot.sampled = verifier.score(x, *sampled).value;
        if (config.search.normalize_reward) slot.sampled /= 2.0;
        slot.record = std::move(r);
    });

    PreferenceBuild out;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].record) {
            out.records.push_back(std::move(*slots[i].record));
            out.positive_scores.push_back(slots[i].positive);
            out.sampled_scores.push_back(slots[i].sampled);
        } else {
            out.dropped.push_back("input " + std::to_string(i) + ": " + slots[i].reason);
            spdlog::info("construct_preferences: dropped input {}: {}", i, slots[i].reason);
        }
    }
    return out;
}

TrainResult train_rcdpo(const PolicyModel& policy, const PolicyModel& ref, std::span<const PreferenceRecord> dataset,
                        const TrainConfig& config, std::uint64_t seed, const EpochCallback& on_epoch) {
    if (!ref.frozen()) throw std::invalid_argument("reference model must be frozen");
    if (dataset.empty()) throw std::invalid_argument("preference dataset must be non-empty");
    const auto& h = config.hyper;
    const bool dpo_only = config.objective == "dpo";
    TrainResult out;
    out.model = policy.trainable_copy();
    auto opt = make_optimizer(config.optimizer, out.model->parameters().size());
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.dpo_epochs; ++epoch) {
        const auto order = shuffled_indices(dataset.size(), derive_seed(seed, epoch));
        for (std::size_t b = 0; b < order.size(); b += h.batch_size) {
            const auto idx = std::span(order).subspan(b, std::min(h.batch_size, order.size() - b));
            const auto batch = gather(dataset, idx);
            const BatchLoss loss = dpo_only ? dpo_batch_loss(*out.model, ref, batch, h.beta)
                                            : combined_batch_loss(*out.model, ref, batch, h.beta, h.lambda_rc);
            check_finite(loss.mean.combined, loss.grad, "train");
            out.log.push_back({step, epoch, loss.mean});
            out.diagnostics.push_back({step, segment_loss_ratio(*out.model, ref, batch), loss.mean.dpo_loss,
                                       loss.mean.rc_loss, loss.mean.combined});
            opt->step(out.model->mutable_parameters(), loss.grad, h.dpo_lr);
            ++step;
        }
        if (on_epoch) on_epoch(epoch, *out.model);
    }
    return out;
}

}  // namespace rcdpo
