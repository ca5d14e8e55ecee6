#include <gtest/gtest.h>

#include <atomic>
#include <bit>
#include <fstream>
#include <sstream>

#include "rcdpo/core/dataset_io.hpp"
#include "rcdpo/errors.hpp"
#include "rcdpo/policy/checkpoint.hpp"
#include "rcdpo/pipeline/config.hpp"
#include "rcdpo/pipeline/pipeline.hpp"
#include "rcdpo/pipeline/stages.hpp"
#include "support/training.hpp"

using namespace rcdpo;
using namespace test_support;

namespace {

std::vector<MultimodalInput> inputs_of(const std::vector<Task>& tasks) {
    std::vector<MultimodalInput> out;
    for (const auto& t : tasks) out.push_back(t.input);
    return out;
}

std::vector<std::uint64_t> bits(std::span<const double> v) {
    std::vector<std::uint64_t> out;
    for (double d : v) out.push_back(std::bit_cast<std::uint64_t>(d));
    return out;
}

// Shared format-pretrained base model with the default configuration.
const PolicyModel& base_model() {
    static const auto model = pretrain_base_model(TrainConfig{}).model->freeze();
    return *model;
}

}  // namespace

TEST(Config, DefaultsValidateAndRoundTrip) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.hyper.batch_size, 32u);
    const auto j = to_json(c);
    EXPECT_EQ(to_json(train_config_from_json(j)), j);
}

TEST(Config, UnknownKeysAreRejectedAtEveryLevel) {
    EXPECT_THROW(train_config_from_json({{"sedd", 3}}), ConfigInvalid);
    EXPECT_THROW(train_config_from_json({{"hyper", {{"betta", 0.1}}}}), ConfigInvalid);
    EXPECT_THROW(train_config_from_json({{"policy", {{"depth", 2}}}}), ConfigInvalid);
    EXPECT_THROW(train_config_from_json({{"decode", {{"max_tokens", 2}}}}), ConfigInvalid);
    EXPECT_THROW(train_config_from_json({{"verifier", {{"host", "x"}}}}), ConfigInvalid);
}

TEST(Config, WrongTypesAndRangesAreRejected) {
    EXPECT_THROW(train_config_from_json({{"seed", "seven"}}), ConfigInvalid);
    EXPECT_THROW(train_config_from_json({{"objective", "ppo"}}), ConfigInvalid);
    EXPECT_THROW(train_config_from_json({{"hyper", {{"beta", -1.0}}}}), ConfigInvalid);
    EXPECT_THROW(train_config_from_json({{"policy", {{"architecture", "mlp"}}}}), ConfigInvalid);
    EXPECT_THROW(train_config_from_json({{"verifier", {{"kind", "remote"}}}}), ConfigInvalid);  // no url
    EXPECT_THROW(train_config_from_json(nlohmann::json::array()), ConfigInvalid);
}

TEST(Config, LoadsBundledDefaultFile) {
    const auto c = load_train_config(std::filesystem::path(RCDPO_SOURCE_DIR) / "configs" / "default.json");
    EXPECT_EQ(to_json(c), to_json(TrainConfig{}));
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
    OptimizerConfig oc;
    oc.kind = "adam";
    auto opt = make_optimizer(oc, 2);
    std::vector<double> p{1.0, -1.0};
    ParamGradient g(2);
    g.values = {0.3, -5.0};
    opt->step(p, g, 0.1);
    // Bias-corrected first step: m_hat = g, v_hat = g^2, so the update is lr * sign(g).
    EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.3 / (0.3 + 1e-8), 1e-12);
    EXPECT_NEAR(p[1], -1.0 + 0.1 * 5.0 / (5.0 + 1e-8), 1e-12);
    auto sgd = make_optimizer(OptimizerConfig{}, 2);
    sgd->step(p, g, 0.5);
    EXPECT_NEAR(p[1], -1.0 + 0.1 * 5.0 / (5.0 + 1e-8) + 2.5, 1e-12);
}

TEST(ParallelFor, CoversEveryIndexAndRethrowsInOrder) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(50, 4, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
    try {
        parallel_for(10, 3, [](std::size_t i) {
            if (i == 7 || i == 4) throw std::runtime_error("boom " + std::to_string(i));
        });
        ADD_FAILURE();
    } catch (const std::runtime_error& e) {
        EXPECT_STREQ(e.what(), "boom 4");
    }
}

TEST(Sft, ZeroLearningRateLeavesParametersUnchanged) {
    SyntheticEnvironment env;
    const auto demos = env.demonstrations(env.tasks(20, 1), 0.3, 2);
    auto m = init_policy(PolicyConfig{}, env.vocab(), 3);
    const auto before = bits(m->parameters());
    const auto stats = fit_sft(*m, demos, 1, 0.0, 8, OptimizerConfig{}, 4);
    EXPECT_EQ(bits(m->parameters()), before);
    EXPECT_EQ(stats.final_loss, stats.initial_loss);
}

TEST(Sft, OneEpochLowersTheLoss) {
    SyntheticEnvironment env;
    const auto demos = env.demonstrations(env.tasks(50, 11), 0.3, 12);
    TrainConfig c;
    c.sft_epochs = 1;
    c.hyper.sft_lr = 0.01;
    const auto m = init_policy(c.policy, env.vocab(), 13);
    const auto warm = sft_warmup(*m, demos, c, 14);
    EXPECT_LT(warm.stats.final_loss, warm.stats.initial_loss);
    EXPECT_TRUE(warm.model->frozen());
    EXPECT_THROW(warm.model->mutable_parameters(), FrozenModel);
}

TEST(Sft, DivergenceIsDetected) {
    SyntheticEnvironment env;
    const auto demos = env.demonstrations(env.tasks(20, 1), 0.0, 2);
    auto m = init_policy(PolicyConfig{}, env.vocab(), 3);
    EXPECT_THROW(fit_sft(*m, demos, 5, 1e300, 8, OptimizerConfig{}, 4), DivergenceDetected);
}

TEST(SftData, PretrainedBaseParsesAtLeast95Percent) {
    SyntheticEnvironment env;
    TrainConfig c;
    const auto inputs = inputs_of(env.tasks(200, 21));
    const auto ds = build_sft_dataset(base_model(), env.vocab(), inputs, c, 22);
    EXPECT_GE(static_cast<double>(ds.records.size()), 0.95 * static_cast<double>(inputs.size()));
    EXPECT_EQ(ds.records.size() + ds.skipped.size(), inputs.size());
    for (const auto& r : ds.records) EXPECT_TRUE(r.trajectory.complete());

    std::stringstream io;
    write_sft_jsonl(io, ds.records);
    EXPECT_EQ(read_sft_jsonl(io, env.vocab().size()), ds.records);

    EXPECT_TRUE(build_sft_dataset(base_model(), env.vocab(), {}, c, 22).records.empty());
}

TEST(SftData, WorkerCountDoesNotChangeTheResult) {
    SyntheticEnvironment env;
    TrainConfig one, four;
    four.workers = 4;
    const auto inputs = inputs_of(env.tasks(30, 23));
    EXPECT_EQ(build_sft_dataset(base_model(), env.vocab(), inputs, one, 24).records,
              build_sft_dataset(base_model(), env.vocab(), inputs, four, 24).records);
}

TEST(Preferences, RecordsAreValidAndPositivesNotWorse) {
    SyntheticEnvironment env;
    TrainConfig c;
    const auto tasks = env.tasks(40, 31);
    const auto verifier = env.verifier(tasks);
    const auto build = construct_preferences(base_model(), env.vocab(), inputs_of(tasks), verifier, c, 32);
    ASSERT_FALSE(build.records.empty());
    EXPECT_EQ(build.records.size() + build.dropped.size(), tasks.size());
    std::size_t not_worse = 0;
    for (std::size_t i = 0; i < build.records.size(); ++i) {
        const auto& r = build.records[i];
        EXPECT_NE(r.cot_w, r.cot_l);
        EXPECT_NO_THROW(r.validate(env.vocab().size()));
        EXPECT_GT(build.positive_scores[i], 0.0);
        not_worse += build.positive_scores[i] >= build.sampled_scores[i];
    }
    EXPECT_GE(static_cast<double>(not_worse), 0.9 * static_cast<double>(build.records.size()));

    std::ostringstream a, b;
    write_preference_jsonl(a, build.records);
    const auto again = construct_preferences(base_model(), env.vocab(), inputs_of(tasks), verifier, c, 32);
    write_preference_jsonl(b, again.records);
    EXPECT_EQ(a.str(), b.str());
}

TEST(Preferences, RequireFrozenModelAndPositiveRatio) {
    SyntheticEnvironment env;
    TrainConfig c;
    const auto tasks = env.tasks(2, 1);
    const auto verifier = env.verifier(tasks);
    auto thawed = base_model().trainable_copy();
    EXPECT_THROW(construct_preferences(*thawed, env.vocab(), inputs_of(tasks), verifier, c, 1), std::invalid_argument);
    c.hyper.prune_ratio = 0.0;
    EXPECT_THROW(construct_preferences(base_model(), env.vocab(), inputs_of(tasks), verifier, c, 1), ConfigInvalid);
}

TEST(Training, MarginsRiseAndLossFalls) {
    auto s = training_setup("table", 200);
    const auto before = combined_batch_loss(*s->ref, *s->ref, s->records, 0.1, 0.1);
    const auto r = train_rcdpo(*s->ref, *s->ref, s->records, s->config, 9);
    const auto after = combined_batch_loss(*r.model, *s->ref, s->records, 0.1, 0.1);
    EXPECT_GT(after.mean.rc_margin, before.mean.rc_margin);
    EXPECT_GT(after.mean.dpo_margin, before.mean.dpo_margin);
    EXPECT_LT(after.mean.combined, before.mean.combined);
    EXPECT_EQ(r.log.size(), (200 + 31) / 32);
    EXPECT_EQ(r.diagnostics.size(), r.log.size());
}

TEST(Training, ZeroLambdaEqualsResponseLevelRun) {
    auto s = training_setup("attn", 64);
    TrainConfig zero = s->config, dpo = s->config;
    zero.hyper.lambda_rc = 0.0;
    dpo.objective = "dpo";
    const auto a = train_rcdpo(*s->ref, *s->ref, s->records, zero, 3);
    const auto b = train_rcdpo(*s->ref, *s->ref, s->records, dpo, 3);
    EXPECT_EQ(bits(a.model->parameters()), bits(b.model->parameters()));
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].loss.dpo_loss, b.log[i].loss.dpo_loss);
        EXPECT_EQ(a.log[i].loss.combined, b.log[i].loss.combined);
    }
}

TEST(Training, ReferenceIsUntouchedAndRunsAreDeterministic) {
    auto s = training_setup("attn", 64);
    std::vector<double> probe_before;
    for (const auto& r : s->records) probe_before.push_back(seq_loglik(*s->ref, r.input, r.cot_w, r.ans_w));
    const auto ref_bits = bits(s->ref->parameters());
    std::vector<std::size_t> epochs_seen;
    s->config.dpo_epochs = 2;
    const auto a = train_rcdpo(*s->ref, *s->ref, s->records, s->config, 4,
                               [&](std::size_t e, const PolicyModel&) { epochs_seen.push_back(e); });
    const auto b = train_rcdpo(*s->ref, *s->ref, s->records, s->config, 4);
    EXPECT_EQ(epochs_seen, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(bits(s->ref->parameters()), ref_bits);
    for (std::size_t i = 0; i < s->records.size(); ++i) {
        EXPECT_EQ(seq_loglik(*s->ref, s->records[i].input, s->records[i].cot_w, s->records[i].ans_w), probe_before[i]);
    }
    EXPECT_EQ(bits(a.model->parameters()), bits(b.model->parameters()));
    EXPECT_THROW(train_rcdpo(*s->ref, *a.model, s->records, s->config, 4), std::invalid_argument);
}

TEST(Training, CheckpointReloadGivesIdenticalLikelihoods) {
    auto s = training_setup("attn", 32);
    const auto r = train_rcdpo(*s->ref, *s->ref, s->records, s->config, 4);
    const auto path = std::filesystem::temp_directory_path() / "rcdpo_pipeline_policy.ckpt.json";
    save_checkpoint(path, *r.model);
    const auto back = load_checkpoint(path);
    for (const auto& rec : s->records) {
        EXPECT_EQ(seq_loglik(*back, rec.input, rec.cot_l, rec.ans_l), seq_loglik(*r.model, rec.input, rec.cot_l, rec.ans_l));
    }
}

TEST(Stages, RunMetaRecordsSeedAndHashes) {
    TrainConfig c;
    c.out = std::filesystem::temp_directory_path() / "rcdpo_meta_test";
    std::filesystem::remove_all(c.out);
    std::filesystem::create_directories(c.out);
    const auto in = c.out / "input.txt";
    std::ofstream(in) << "abc";
    write_run_meta(c, "probe", {in}, {});
    std::ifstream f(c.out / "run_meta_probe.json");
    const auto j = nlohmann::json::parse(f);
    EXPECT_EQ(j["seed"], c.seed);
    EXPECT_EQ(j["inputs"]["input.txt"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_FALSE(j["config"].contains("out"));
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}
