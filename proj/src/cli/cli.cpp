#include "rcdpo/cli/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "rcdpo/errors.hpp"
#include "rcdpo/eval/metrics.hpp"
#include "rcdpo/pipeline/config.hpp"
#include "rcdpo/pipeline/stages.hpp"

namespace rcdpo::cli {

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool enumerate = false;
    std::optional<double> lambda;
    std::optional<double> beta;
    std::optional<double> prune_ratio;
    std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "seed override");
    cmd->add_option("--out", o.out, "output directory override");
    cmd->add_flag("--enumerate-mcts", o.enumerate, "deterministic top-k expansion (test mode)");
    cmd->add_option("--lambda", o.lambda, "weight of the reasoning-conditioned loss");
    cmd->add_option("--beta", o.beta, "preference temperature");
    cmd->add_option("--prune-ratio", o.prune_ratio, "fraction of CoT words to prune");
    cmd->add_option("--workers", o.workers, "worker threads for data construction");
}

TrainConfig resolve(const Overrides& o) {
    TrainConfig c = o.config.empty() ? TrainConfig{} : load_train_config(o.config);
    if (o.seed) c.seed = *o.seed;
    if (!o.out.empty()) c.out = o.out;
    if (o.enumerate) c.search.mode = "enumerate";
    if (o.lambda) c.hyper.lambda_rc = *o.lambda;
    if (o.beta) c.hyper.beta = *o.beta;
    if (o.prune_ratio) c.hyper.prune_ratio = *o.prune_ratio;
    if (o.workers) c.workers = *o.workers;
    c.validate();
    return c;
}

void error_doc(std::ostream& err, const std::string& stage, const std::string& error, const std::string& detail) {
    err << nlohmann::json{{"stage", stage}, {"error", error}, {"detail", detail}}.dump() << '\n';
}

// Routes library logging to `err` for the lifetime of one command so stdout
// carries only the JSON summary.
class LogScope {
public:
    explicit LogScope(std::ostream& err) : previous_(spdlog::default_logger()) {
        auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
        spdlog::set_default_logger(std::make_shared<spdlog::logger>("rcdpo", sink));
    }
    ~LogScope() { spdlog::set_default_logger(previous_); }
    LogScope(const LogScope&) = delete;
    LogScope& operator=(const LogScope&) = delete;

private:
    std::shared_ptr<spdlog::logger> previous_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Reasoning-conditioned preference optimization on a toy environment", "rcdpo"};
    app.require_subcommand(1, 1);
    Overrides o;
    SearchCommand search_cmd;
    PruneCommand prune_cmd;
    std::string fixture;

    auto* sft = app.add_subcommand("sft", "format pretraining, SFT data generation and SFT warm-up");
    auto* build = app.add_subcommand("build-pref", "MCTS positives and attention-pruned negatives");
    auto* train = app.add_subcommand("train", "preference training on the combined objective");
    auto* diagnose = app.add_subcommand("diagnose", "segment diagnostics and hallucination metrics");
    auto* search = app.add_subcommand("search", "MCTS on one input");
    auto* prune = app.add_subcommand("prune", "attention pruning report for one sampled response");
    auto* chair = app.add_subcommand("eval-chair", "CHAIR on a JSON Lines fixture");
    auto* pope = app.add_subcommand("eval-pope", "POPE metrics on a JSON Lines fixture");
    for (auto* cmd : {sft, build, train, diagnose, search, prune, chair, pope}) add_common(cmd, o);
    search->add_option("--input-index", search_cmd.input_index, "index into the environment inputs");
    search->add_flag("--dump-tree", search_cmd.dump_tree, "include the search tree in the output");
    prune->add_option("--input-index", prune_cmd.input_index, "index into the environment inputs");
    for (auto* cmd : {chair, pope}) cmd->add_option("--fixture", fixture, "JSON Lines fixture")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        error_doc(err, "cli", "ConfigInvalid", e.what());
        return kConfigError;
    }

    auto* cmd = app.get_subcommands().front();
    const std::string stage = cmd->get_name();
    const LogScope log_scope(err);
    TrainConfig config;
    try {
        config = resolve(o);
    } catch (const Error& e) {
        error_doc(err, stage, e.kind(), e.what());
        return kConfigError;
    }

    try {
        nlohmann::json summary;
        if (cmd == sft) {
            summary = run_sft_stage(config);
        } else if (cmd == build) {
            summary = run_build_pref_stage(config);
        } else if (cmd == train) {
            summary = run_train_stage(config);
        } else if (cmd == diagnose) {
            summary = run_diagnose_stage(config);
        } else if (cmd == search) {
            search_cmd.enumerate = o.enumerate;
            summary = run_search_stage(config, search_cmd);
        } else if (cmd == prune) {
            summary = run_prune_stage(config, prune_cmd);
        } else if (cmd == chair) {
            write_run_meta(config, stage, {fixture});
            const auto records = load_chair_fixture(fixture);
            summary = to_json(rcdpo::chair(records));
        } else {
            write_run_meta(config, stage, {fixture});
            const auto records = load_pope_fixture(fixture);
            summary = to_json(pope_metrics(records));
        }
        if (cmd == chair || cmd == pope) {
            const auto path = config.out / (stage + ".json");
            std::ofstream(path) << summary.dump(2) << '\n';
            write_run_meta(config, stage, {fixture}, {path});
        }
        out << summary.dump(2) << '\n';
        return kOk;
    } catch (const ConfigInvalid& e) {
        error_doc(err, stage, e.kind(), e.what());
        return kConfigError;
    } catch (const Error& e) {
        error_doc(err, stage, "StageFailed", e.kind() + ": " + e.what());
        return kStageFailure;
    } catch (const std::exception& e) {
        error_doc(err, stage, "StageFailed", e.what());
        return kStageFailure;
    }
}

}  // namespace rcdpo::cli
