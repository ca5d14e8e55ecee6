#include "rcdpo/pipeline/stages.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "rcdpo/core/dataset_io.hpp"
#include "rcdpo/core/format.hpp"
#include "rcdpo/core/rng.hpp"
#include "rcdpo/errors.hpp"
#include "rcdpo/eval/metrics.hpp"
#include "rcdpo/mcts/mcts.hpp"
#include "rcdpo/policy/checkpoint.hpp"
#include "rcdpo/pruner/pruner.hpp"

namespace rcdpo {

namespace {

namespace fs = std::filesystem;

// Stream indices for derive_seed; one per independent random source.
enum SeedStream : std::uint64_t {
    kTasks = 1,
    kDemoTasks = 2,
    kDemos = 3,
    kInit = 10,
    kPretrain = 11,
    kSftSampling = 12,
    kSftWarmup = 13,
    kPreferences = 14,
    kTraining = 15,
    kProbe = 16,
    kEval = 17,
};

fs::path artifact(const TrainConfig& c, std::string_view name) { return c.out / std::string(name); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void require_file(const fs::path& path, std::string_view producer) {
    if (!fs::exists(path)) {
        throw std::runtime_error(path.string() + " is missing; run the '" + std::string(producer) + "' stage first");
    }
}

std::vector<Task> input_tasks(const SyntheticEnvironment& env, const TrainConfig& c) {
    return env.tasks(c.environment.inputs, derive_seed(c.seed, kTasks));
}

std::vector<MultimodalInput> inputs_of(const std::vector<Task>& tasks) {
    std::vector<MultimodalInput> out;
    for (const auto& t : tasks) out.push_back(t.input);
    return out;
}

std::unique_ptr<Verifier> make_verifier(const TrainConfig& c, const SyntheticEnvironment& env,
                                        const std::vector<Task>& tasks) {
    if (c.verifier.kind == "remote") {
        RemoteVerifierConfig rc;
        rc.url = c.verifier.url;
        rc.max_in_flight = c.verifier.max_in_flight;
        rc.retries = c.verifier.retries;
        rc.timeout_seconds = c.verifier.timeout_seconds;
        return std::make_unique<RemoteVerifier>(rc, env.vocab());
    }
    return std::make_unique<MockVerifier>(env.verifier(tasks));
}

std::unique_ptr<PolicyModel> search_model(const TrainConfig& c) {
    const fs::path sft = artifact(c, artifacts::kSft);
    if (fs::exists(sft)) return load_checkpoint(sft)->freeze();
    spdlog::info("{} not found; using a freshly pretrained base model", sft.string());
    return pretrain_base_model(c).model->freeze();
}

const Task& pick_task(const std::vector<Task>& tasks, std::size_t index) {
    if (index >= tasks.size()) {
        throw ConfigInvalid("input index " + std::to_string(index) + " >= " + std::to_string(tasks.size()) +
                            " inputs");
    }
    return tasks[index];
}

nlohmann::json loss_json(std::size_t step, std::size_t epoch, const LossBreakdown& b) {
    return {{"step", step},         {"epoch", epoch},           {"dpo_loss", b.dpo_loss},
            {"rc_loss", b.rc_loss}, {"combined", b.combined},   {"dpo_margin", b.dpo_margin},
            {"rc_margin", b.rc_margin}};
}

struct ModelEval {
    PopeMetrics pope;
    SegmentChair chair;
    std::size_t overflows = 0;
};

// Greedy structured decoding on every task, scored with POPE (the yes/no
// answer) and segment CHAIR (objects named in the reasoning, other than the
// queried one, against the image contents).
ModelEval evaluate_model(const PolicyModel& model, const SyntheticEnvironment& env, const std::vector<Task>& tasks,
                         const TrainConfig& c) {
    const StructuredDecoder decoder(model, env.vocab(), c.decode.limits);
    ObjectLexicon lexicon;
    for (const auto& o : env.objects()) lexicon.add(env.vocab().decode(env.object_tokens(o)), o);
    std::vector<PopeRecord> pope;
    std::vector<SegmentCaption> captions;
    ModelEval out;
    Rng rng(derive_seed(c.seed, kEval));
    for (const auto& t : tasks) {
        Trajectory tr;
        try {
            tr = decoder.complete(t.input, {}, c.hyper.max_depth, 0.0, rng);
        } catch (const RolloutOverflow&) {
            ++out.overflows;
            pope.push_back({t.present, false});
            continue;
        }
        pope.push_back({t.present, tr.answer_tokens == env.vocab().encode("yes")});
        SegmentCaption cap;
        std::string cot_text;
        for (const auto& s : tr.steps) cot_text += env.vocab().decode(s.tokens) + "\n";
        cap.cot_mentions = lexicon.extract(cot_text);
        cap.cot_mentions.erase(t.object);
        cap.answer_mentions = lexicon.extract(env.vocab().decode(tr.answer_tokens));
        cap.ground_truth.insert(t.objects.begin(), t.objects.end());
        captions.push_back(std::move(cap));
    }
    out.pope = pope_metrics(pope);
    if (!captions.empty()) out.chair = segment_chair(captions);
    return out;
}

nlohmann::json chair_json(const SegmentChairScore& s) {
    nlohmann::json j{{"chair_s", s.sentence}};
    j["chair_i"] = s.instance ? nlohmann::json(*s.instance) : nlohmann::json(nullptr);
    return j;
}

nlohmann::json eval_json(const ModelEval& e) {
    return {{"pope", to_json(e.pope)},
            {"chair", {{"full", chair_json(e.chair.full)}, {"cot", chair_json(e.chair.cot)}, {"answer", chair_json(e.chair.answer)}}},
            {"overflows", e.overflows}};
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 failed");
    }
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return hex.str();
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return sha256_hex(buf.str());
}

void write_run_meta(const TrainConfig& config, std::string_view stage, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& outputs) {
    fs::create_directories(config.out);
    auto cfg = to_json(config);
    cfg.erase("out");
    auto hashes = [](const std::vector<fs::path>& files) {
        nlohmann::json h = nlohmann::json::object();
        for (const auto& p : files) {
            if (fs::exists(p)) h[p.filename().string()] = sha256_file(p);
        }
        return h;
    };
    nlohmann::json meta{{"stage", stage},
                        {"seed", config.seed},
                        {"config", cfg},
                        {"config_sha256", sha256_hex(cfg.dump())},
                        {"inputs", hashes(inputs)},
                        {"outputs", hashes(outputs)}};
    write_json(config.out / ("run_meta_" + std::string(stage) + ".json"), meta);
}

BaseModel pretrain_base_model(const TrainConfig& c) {
    const SyntheticEnvironment env;
    const auto demo_tasks = env.tasks(c.environment.demonstrations, derive_seed(c.seed, kDemoTasks));
    const auto demos = env.demonstrations(demo_tasks, c.environment.hallucination_rate, derive_seed(c.seed, kDemos));
    BaseModel out;
    out.model = init_policy(c.policy, env.vocab(), derive_seed(c.seed, kInit));
    out.stats = fit_sft(*out.model, demos, c.policy.pretrain_epochs, c.policy.pretrain_lr, c.hyper.batch_size,
                        c.optimizer, derive_seed(c.seed, kPretrain));
    return out;
}

nlohmann::json run_sft_stage(const TrainConfig& c) {
    write_run_meta(c, "sft", {});
    const SyntheticEnvironment env;
    const auto tasks = input_tasks(env, c);
    const auto inputs = inputs_of(tasks);

    auto base = pretrain_base_model(c);
    save_checkpoint(artifact(c, artifacts::kBase), *base.model);

    const SftDataset ds = build_sft_dataset(*base.model, env.vocab(), inputs, c, derive_seed(c.seed, kSftSampling));
    save_sft_dataset(artifact(c, artifacts::kSftDataset), ds.records);
    if (ds.records.empty()) throw std::runtime_error("no generation parsed into a complete trajectory");

    const SftWarmup warm = sft_warmup(*base.model, ds.records, c, derive_seed(c.seed, kSftWarmup));
    save_checkpoint(artifact(c, artifacts::kSft), *warm.model);

    nlohmann::json summary{
        {"pretrain", {{"initial_loss", base.stats.initial_loss}, {"final_loss", base.stats.final_loss}}},
        {"sft_dataset",
         {{"inputs", inputs.size()},
          {"records", ds.records.size()},
          {"parse_rate", static_cast<double>(ds.records.size()) / static_cast<double>(inputs.size())},
          {"attempts", ds.attempts},
          {"skipped", ds.skipped}}},
        {"sft", {{"initial_loss", warm.stats.initial_loss}, {"final_loss", warm.stats.final_loss}}},
    };
    write_json(artifact(c, artifacts::kSftLog), summary);
    write_run_meta(c, "sft", {},
                   {artifact(c, artifacts::kBase), artifact(c, artifacts::kSftDataset), artifact(c, artifacts::kSft)});
    return summary;
}

nlohmann::json run_build_pref_stage(const TrainConfig& c) {
    const fs::path sft_path = artifact(c, artifacts::kSft);
    require_file(sft_path, "sft");
    write_run_meta(c, "build-pref", {sft_path});
    const SyntheticEnvironment env;
    const auto tasks = input_tasks(env, c);
    const auto inputs = inputs_of(tasks);
    const auto verifier = make_verifier(c, env, tasks);
    const auto sft = load_checkpoint(sft_path)->freeze();

    const PreferenceBuild build =
        construct_preferences(*sft, env.vocab(), inputs, *verifier, c, derive_seed(c.seed, kPreferences));
    save_preference_dataset(artifact(c, artifacts::kPreferences), build.records);

    std::size_t not_worse = 0;
    double pos = 0.0, sam = 0.0;
    for (std::size_t i = 0; i < build.records.size(); ++i) {
        not_worse += build.positive_scores[i] >= build.sampled_scores[i];
        pos += build.positive_scores[i];
        sam += build.sampled_scores[i];
    }
    const double n = std::max<double>(1.0, static_cast<double>(build.records.size()));
    nlohmann::json summary{{"inputs", inputs.size()},
                           {"records", build.records.size()},
                           {"dropped", build.dropped},
                           {"mean_positive_score", pos / n},
                           {"mean_sampled_score", sam / n},
                           {"positive_not_worse_fraction", static_cast<double>(not_worse) / n}};
    write_json(artifact(c, artifacts::kPreferenceReport), summary);
    if (build.records.empty()) throw std::runtime_error("every input was dropped; no preference records");
    write_run_meta(c, "build-pref", {sft_path}, {artifact(c, artifacts::kPreferences)});
    return summary;
}

nlohmann::json run_train_stage(const TrainConfig& c) {
    const fs::path sft_path = artifact(c, artifacts::kSft);
    const fs::path pref_path = artifact(c, artifacts::kPreferences);
    require_file(sft_path, "sft");
    require_file(pref_path, "build-pref");
    write_run_meta(c, "train", {sft_path, pref_path});
    const auto ref = load_checkpoint(sft_path)->freeze();
    const auto data = load_preference_dataset(pref_path, ref->vocab_size());
    if (data.empty()) throw std::runtime_error("preference dataset is empty");

    std::vector<fs::path> written;
    const TrainResult result = train_rcdpo(*ref, *ref, data, c, derive_seed(c.seed, kTraining),
                                           [&](std::size_t epoch, const PolicyModel& m) {
                                               const auto p = c.out / ("policy_epoch" + std::to_string(epoch + 1) + ".ckpt.json");
                                               save_checkpoint(p, m);
                                               written.push_back(p);
                                           });
    save_checkpoint(artifact(c, artifacts::kPolicy), *result.model);

    std::ostringstream log;
    for (const auto& s : result.log) log << loss_json(s.step, s.epoch, s.loss).dump() << '\n';
    write_text(artifact(c, artifacts::kTrainLog), log.str());
    std::ostringstream csv;
    write_diagnostic_csv(csv, result.diagnostics);
    write_text(artifact(c, artifacts::kSegmentRatio), csv.str());

    written.push_back(artifact(c, artifacts::kPolicy));
    written.push_back(artifact(c, artifacts::kTrainLog));
    written.push_back(artifact(c, artifacts::kSegmentRatio));
    write_run_meta(c, "train", {sft_path, pref_path}, written);
    const auto& first = result.log.front().loss;
    const auto& last = result.log.back().loss;
    return {{"records", data.size()},
            {"steps", result.log.size()},
            {"first", loss_json(0, 0, first)},
            {"last", loss_json(result.log.back().step, result.log.back().epoch, last)}};
}

nlohmann::json run_diagnose_stage(const TrainConfig& c) {
    const fs::path sft_path = artifact(c, artifacts::kSft);
    const fs::path policy_path = artifact(c, artifacts::kPolicy);
    const fs::path pref_path = artifact(c, artifacts::kPreferences);
    const fs::path csv_path = artifact(c, artifacts::kSegmentRatio);
    require_file(sft_path, "sft");
    require_file(pref_path, "build-pref");
    require_file(policy_path, "train");
    require_file(csv_path, "train");
    write_run_meta(c, "diagnose", {sft_path, policy_path, pref_path, csv_path});

    const SyntheticEnvironment env;
    const auto tasks = input_tasks(env, c);
    const auto ref = load_checkpoint(sft_path)->freeze();
    const auto policy = load_checkpoint(policy_path);
    const auto data = load_preference_dataset(pref_path, ref->vocab_size());

    const BatchLoss before = combined_batch_loss(*ref, *ref, data, c.hyper.beta, c.hyper.lambda_rc);
    const BatchLoss after = combined_batch_loss(*policy, *ref, data, c.hyper.beta, c.hyper.lambda_rc);
    const SegmentGap gap = segment_loss_ratio(*policy, *ref, data);

    nlohmann::json series = nlohmann::json::array();
    {
        std::ifstream in(csv_path);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            std::istringstream row(line);
            std::string cell;
            std::vector<double> v;
            while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
            if (v.size() != 6) throw std::runtime_error("malformed row in " + csv_path.string());
            series.push_back({{"step", v[0]}, {"cot_ratio", v[1]}, {"answer_ratio", v[2]}});
        }
    }

    nlohmann::json summary{
        {"records", data.size()},
        {"margins",
         {{"before", {{"dpo", before.mean.dpo_margin}, {"rc", before.mean.rc_margin}, {"combined", before.mean.combined}}},
          {"after", {{"dpo", after.mean.dpo_margin}, {"rc", after.mean.rc_margin}, {"combined", after.mean.combined}}}}},
        {"segment_gap", {{"cot", gap.cot}, {"answer", gap.answer}}},
        {"segment_series", series},
        {"eval", {{"sft", eval_json(evaluate_model(*ref, env, tasks, c))},
                  {"policy", eval_json(evaluate_model(*policy, env, tasks, c))}}},
    };
    write_json(artifact(c, artifacts::kDiagnose), summary);
    write_run_meta(c, "diagnose", {sft_path, policy_path, pref_path, csv_path}, {artifact(c, artifacts::kDiagnose)});
    return summary;
}

nlohmann::json run_search_stage(const TrainConfig& c, const SearchCommand& cmd) {
    write_run_meta(c, "search", {artifact(c, artifacts::kSft)});
    const SyntheticEnvironment env;
    const auto tasks = input_tasks(env, c);
    const Task& task = pick_task(tasks, cmd.input_index);
    const auto verifier = make_verifier(c, env, tasks);
    const auto model = search_model(c);
    const StructuredDecoder decoder(*model, env.vocab(), c.decode.limits);
    SearchOptions options;
    options.mode = cmd.enumerate || c.search.mode == "enumerate" ? ExpandMode::kEnumerate : ExpandMode::kSample;
    options.temperature = c.decode.temperature;
    options.limits = c.decode.limits;
    options.expand_attempts = c.search.expand_attempts;
    options.normalize_reward = c.search.normalize_reward;
    const SearchResult r =
        search(task.input, decoder, *verifier, c.hyper, derive_seed(derive_seed(c.seed, kPreferences), cmd.input_index), options);
    nlohmann::json out{{"input_index", cmd.input_index},
                       {"question", env.vocab().decode(task.input.prompt_tokens)},
                       {"image", env.vocab().decode(task.input.image_tokens)},
                       {"best", render_trajectory(r.trajectory, env.vocab())},
                       {"score", r.score},
                       {"rollouts", r.rollouts.size()},
                       {"failed_iterations", r.failed_iterations}};
    if (cmd.dump_tree) {
        out["tree"] = r.tree.to_json();
        write_json(c.out / "tree.json", out["tree"]);
    }
    write_json(c.out / "search.json", out);
    write_run_meta(c, "search", {artifact(c, artifacts::kSft)}, {c.out / "search.json", c.out / "tree.json"});
    return out;
}

nlohmann::json run_prune_stage(const TrainConfig& c, const PruneCommand& cmd) {
    write_run_meta(c, "prune", {artifact(c, artifacts::kSft)});
    const SyntheticEnvironment env;
    const auto tasks = input_tasks(env, c);
    const Task& task = pick_task(tasks, cmd.input_index);
    const auto model = search_model(c);
    const StructuredDecoder decoder(*model, env.vocab(), c.decode.limits);
    Rng rng(derive_seed(derive_seed(c.seed, kProbe), cmd.input_index));
    const Trajectory t = decoder.complete(task.input, {}, c.hyper.max_depth, c.decode.temperature, rng);
    const TokenSeq cot = t.cot_tokens();
    const PruneReport rep = prune_response(*model, env.vocab(), task.input, cot, t.answer_segment(), c.hyper.prune_ratio);

    nlohmann::json words = nlohmann::json::array();
    for (const auto& w : rep.words) {
        words.push_back({{"word", env.vocab().decode(std::span(cot).subspan(w.span.start, w.span.end - w.span.start))},
                         {"start", w.span.start},
                         {"end", w.span.end},
                         {"score", w.score}});
    }
    nlohmann::json removed = nlohmann::json::array();
    for (const auto& sp : rep.removed) removed.push_back({{"start", sp.start}, {"end", sp.end}});
    nlohmann::json out{{"input_index", cmd.input_index},
                       {"prune_ratio", c.hyper.prune_ratio},
                       {"words", words},
                       {"removed", removed},
                       {"original", render_tokens(rep.original, env.vocab())},
                       {"corrupted", render_tokens(rep.corrupted, env.vocab())}};
    write_json(c.out / "prune.json", out);
    write_run_meta(c, "prune", {artifact(c, artifacts::kSft)}, {c.out / "prune.json"});
    return out;
}

}  // namespace rcdpo
