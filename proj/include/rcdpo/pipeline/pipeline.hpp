#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rcdpo/core/token.hpp"
#include "rcdpo/core/trajectory.hpp"
#include "rcdpo/losses/losses.hpp"
#include "rcdpo/pipeline/config.hpp"
#include "rcdpo/pipeline/environment.hpp"
#include "rcdpo/policy/policy.hpp"
#include "rcdpo/verifier/verifier.hpp"

namespace rcdpo {

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(std::span<double> params, const ParamGradient& grad, double lr) = 0;
};

/// Plain SGD, or Adam with bias correction.
std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config, std::size_t num_params);

/// Seeded initialization of the configured architecture for `vocab`.
std::unique_ptr<PolicyModel> init_policy(const PolicyConfig& config, const Vocabulary& vocab, std::uint64_t seed);

/// Runs `fn(i)` for i in [0, n) on `workers` threads. Exceptions are rethrown
/// in index order once all workers finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

struct SftStats {
    double initial_loss = 0.0;  // full-dataset loss before the first step
    double final_loss = 0.0;    // full-dataset loss after the last step
    std::vector<double> step_losses;
};

/// Minibatch descent on sft_loss, in place. Throws DivergenceDetected.
SftStats fit_sft(PolicyModel& model, std::span<const SftRecord> dataset, std::size_t epochs, double lr,
                 std::size_t batch_size, const OptimizerConfig& optimizer, std::uint64_t seed);

struct SftWarmup {
    std::unique_ptr<PolicyModel> model;  // frozen pi_SFT
    SftStats stats;
};

SftWarmup sft_warmup(const PolicyModel& policy, std::span<const SftRecord> dataset, const TrainConfig& config,
                     std::uint64_t seed);

struct SftDataset {
    std::vector<SftRecord> records;
    std::vector<std::string> skipped;  // one reason per skipped input
    std::size_t attempts = 0;
};

/// Free generation from `policy`, rendered to text and parsed back. Inputs
/// whose generations never parse into a complete trajectory are skipped.
SftDataset build_sft_dataset(const PolicyModel& policy, const Vocabulary& vocab,
                             std::span<const MultimodalInput> inputs, const TrainConfig& config, std::uint64_t seed);

struct PreferenceBuild {
    std::vector<PreferenceRecord> records;
    std::vector<std::string> dropped;  // "input <i>: <reason>"
    std::vector<double> positive_scores;  // per emitted record
    std::vector<double> sampled_scores;   // per emitted record
};

/// Per input: MCTS positive, one sampled response, attention pruning of the
/// sampled CoT. Inputs with a zero best score or a degenerate negative are dropped.
PreferenceBuild construct_preferences(const PolicyModel& sft, const Vocabulary& vocab,
                                      std::span<const MultimodalInput> inputs, const Verifier& verifier,
                                      const TrainConfig& config, std::uint64_t seed);

struct StepLog {
    std::size_t step = 0;
    std::size_t epoch = 0;
    LossBreakdown loss;  // minibatch mean before the update
};

struct TrainResult {
    std::unique_ptr<PolicyModel> model;
    std::vector<StepLog> log;
    std::vector<DiagnosticPoint> diagnostics;
};

using EpochCallback = std::function<void(std::size_t epoch, const PolicyModel& model)>;

/// Minibatch descent on the configured objective ("rc-dpo": combined loss;
/// "dpo": response-level loss only). `policy` is copied; `ref` must be frozen.
TrainResult train_rcdpo(const PolicyModel& policy, const PolicyModel& ref, std::span<const PreferenceRecord> dataset,
                        const TrainConfig& config, std::uint64_t seed, const EpochCallback& on_epoch = {});

}  // namespace rcdpo
