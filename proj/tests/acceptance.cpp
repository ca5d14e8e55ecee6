// Acceptance gate: one timed check per criterion, one PASS/FAIL line each.
// Exit status is non-zero when any criterion fails.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "rcdpo/cli/cli.hpp"
#include "rcdpo/core/format.hpp"
#include "rcdpo/errors.hpp"
#include "rcdpo/eval/metrics.hpp"
#include "rcdpo/losses/losses.hpp"
#include "rcdpo/mcts/mcts.hpp"
#include "rcdpo/pipeline/stages.hpp"
#include "rcdpo/pruner/pruner.hpp"
#include "support/corpus.hpp"
#include "support/enumerable.hpp"
#include "support/records.hpp"
#include "support/training.hpp"

using namespace rcdpo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Collects the first few failures of a criterion.
class Check {
public:
    void expect(bool ok, const std::string& what) {
        if (ok) return;
        if (++failures_ <= 3) detail_ += (detail_.empty() ? "" : "; ") + what;
    }
    void note(const std::string& s) { notes_ += (notes_.empty() ? "" : ", ") + s; }
    Outcome outcome() const {
        if (failures_ == 0) return {true, notes_};
        return {false, std::to_string(failures_) + " failure(s): " + detail_};
    }

private:
    int failures_ = 0;
    std::string detail_;
    std::string notes_;
};

std::string fmt(double v, int precision = 6) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

std::vector<std::uint64_t> bits(std::span<const double> v) {
    std::vector<std::uint64_t> out;
    for (double d : v) out.push_back(std::bit_cast<std::uint64_t>(d));
    return out;
}

// 1. Zero-margin anchor.
Outcome zero_margin() {
    Check c;
    std::mt19937_64 rng(101);
    auto table = test_support::table_policy(1);
    auto attn = test_support::attn_policy(2);
    const auto table_ref = table.freeze();
    const auto attn_ref = attn.freeze();
    const double log2 = std::log(2.0);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto r = test_support::random_record(rng);
        const bool use_table = i % 2 == 0;
        const auto b = use_table ? combined_loss(table, *table_ref, r, 0.1, 0.1).breakdown
                                 : combined_loss(attn, *attn_ref, r, 0.1, 0.1).breakdown;
        worst = std::max({worst, std::abs(b.dpo_loss - log2), std::abs(b.rc_loss - log2),
                          std::abs(b.combined - 1.1 * log2)});
    }
    c.expect(worst <= 1e-9, "max deviation " + fmt(worst));
    c.note("max |loss - log 2| = " + fmt(worst, 3));
    return c.outcome();
}

// 2. Chain-rule identity and response-level split.
Outcome chain_rule() {
    Check c;
    std::mt19937_64 rng(202);
    double g1 = 0.0, g2 = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto r = test_support::random_record(rng);
        const auto table = test_support::table_policy(1000 + i);
        const auto attn = test_support::attn_policy(2000 + i);
        for (const PolicyModel* m : {static_cast<const PolicyModel*>(&table), static_cast<const PolicyModel*>(&attn)}) {
            const auto g = decomposition_gap(*m, r.input, {r.cot_w, r.ans_w}, {r.cot_l, r.ans_l});
            g1 = std::max(g1, g.chain_rule);
            g2 = std::max(g2, g.response);
        }
    }
    c.expect(g1 <= 1e-9, "chain-rule gap " + fmt(g1));
    c.expect(g2 <= 1e-9, "response split residual " + fmt(g2));
    c.note("gap1 " + fmt(g1, 3) + ", residual " + fmt(g2, 3));
    return c.outcome();
}

// 3. Analytic gradients against central differences on the table policy.
Outcome gradients() {
    Check c;
    std::mt19937_64 rng(303);
    double worst_sft = 0.0, worst_comb = 0.0;
    for (int i = 0; i < 50; ++i) {
        auto m = test_support::table_policy(3000 + i);
        const auto ref = test_support::table_policy(4000 + i).freeze();
        std::vector<SftRecord> batch{test_support::random_sft_record(rng), test_support::random_sft_record(rng)};
        const auto rec = test_support::random_record(rng);

        const auto gs = sft_loss(m, batch).grad;
        const auto fs_ = oracle::central_difference(m, [&] {
            double s = 0.0;
            for (const auto& r : batch) s -= test_support::loglik(m, r.input, {}, r.trajectory.response_tokens());
            return s / static_cast<double>(batch.size());
        });
        worst_sft = std::max(worst_sft, oracle::max_relative_error(gs.values, fs_));

        const auto gc = combined_loss(m, *ref, rec, 0.1, 0.1).grad;
        const auto fc = oracle::central_difference(
            m, [&] { return test_support::reference_losses(m, *ref, rec, 0.1, 0.1).combined; });
        worst_comb = std::max(worst_comb, oracle::max_relative_error(gc.values, fc));
    }
    c.expect(worst_sft <= 1e-4, "sft relative error " + fmt(worst_sft));
    c.expect(worst_comb <= 1e-4, "combined relative error " + fmt(worst_comb));
    c.note("max rel err sft " + fmt(worst_sft, 3) + ", combined " + fmt(worst_comb, 3));
    return c.outcome();
}

// 4. Search optimality on the enumerable environment.
Outcome search_optimality() {
    Check c;
    EnumerableEnvironment env;
    const StructuredDecoder decoder(env.policy(), env.vocab());
    const auto outcomes = test_support::enumerate_outcomes(env);
    const int best = test_support::best_score(outcomes);
    c.expect(outcomes.size() == 9, "expected 9 trajectories, found " + std::to_string(outcomes.size()));
    HyperParams p;
    p.iterations = 30;
    p.max_children = EnumerableEnvironment::kBranching;
    int enumerate_hits = 0, sample_hits = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        SearchOptions o;
        o.expand_attempts = TrainConfig{}.search.expand_attempts;
        o.mode = ExpandMode::kEnumerate;
        const auto e = search(env.input(), decoder, env.verifier(), p, seed, o);
        enumerate_hits += e.score == best && env.verifier().score(env.input(), e.trajectory).value == best;
        o.mode = ExpandMode::kSample;
        const auto s = search(env.input(), decoder, env.verifier(), p, seed, o);
        sample_hits += s.score == best && env.verifier().score(env.input(), s.trajectory).value == best;
    }
    c.expect(enumerate_hits == 100, "enumerate optimal in " + std::to_string(enumerate_hits) + "/100");
    c.expect(sample_hits >= 90, "sample optimal in " + std::to_string(sample_hits) + "/100");
    c.note("enumerate " + std::to_string(enumerate_hits) + "/100, sample " + std::to_string(sample_hits) + "/100");
    return c.outcome();
}

// 5. Backpropagated values are running means; visits are conserved.
Outcome backprop_mean() {
    Check c;
    std::mt19937_64 rng(505);
    std::uniform_real_distribution<double> reward(0.0, 2.0);
    double worst = 0.0;
    bool conserved = true;
    std::function<void(const SearchNode&)> conserve = [&](const SearchNode& n) {
        std::size_t kids = 0;
        for (const auto& k : n.children) {
            kids += k->N;
            conserve(*k);
        }
        conserved = conserved && n.N >= kids;
    };
    for (int trial = 0; trial < 1000; ++trial) {
        SearchNode root;
        std::map<const SearchNode*, std::pair<double, std::size_t>> shadow;  // reward sum, count
        const int iterations = 1 + static_cast<int>(rng() % 40);
        for (int it = 0; it < iterations; ++it) {
            std::vector<SearchNode*> path{&root};
            while (!path.back()->children.empty() && rng() % 3 != 0) {
                auto& kids = path.back()->children;
                path.push_back(kids[rng() % kids.size()].get());
            }
            if (path.back()->children.size() < 3 && rng() % 2 == 0) {
                auto child = std::make_unique<SearchNode>();
                child->parent = path.back();
                path.back()->children.push_back(std::move(child));
                path.push_back(path.back()->children.back().get());
            }
            const double r = reward(rng);
            backprop(path, r);
            for (auto* n : path) {
                shadow[n].first += r;
                ++shadow[n].second;
            }
        }
        for (const auto& [node, acc] : shadow) {
            worst = std::max(worst, std::abs(node->Q - acc.first / static_cast<double>(acc.second)));
            conserved = conserved && node->N == acc.second;
        }
        conserved = conserved && root.N == static_cast<std::size_t>(iterations);
        conserve(root);
    }
    c.expect(worst <= 1e-12, "max |Q - mean| " + fmt(worst));
    c.expect(conserved, "visit conservation violated");
    c.note("max |Q - mean| = " + fmt(worst, 3));
    return c.outcome();
}

// 6. Pruner against a full-sort oracle and a brute-force score loop.
Outcome pruner_oracle() {
    Check c;
    std::mt19937_64 rng(606);
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t w = 1 + rng() % 15;
        std::vector<WordScore> words;
        std::size_t pos = 0;
        for (std::size_t i = 0; i < w; ++i) {
            const std::size_t width = 1 + rng() % 3;
            words.push_back({{pos, pos + width}, static_cast<double>(rng() % 5) / 4.0});
            pos += width + rng() % 2;
        }
        const double r = static_cast<double>(rng() % 101) / 100.0;
        std::vector<std::tuple<double, std::size_t, std::size_t>> keyed;
        for (std::size_t i = 0; i < w; ++i) keyed.emplace_back(-words[i].score, words[i].span.start, i);
        std::sort(keyed.begin(), keyed.end());
        std::size_t k = r == 0.0 ? 0 : std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(r * w)));
        std::vector<std::size_t> expected;
        for (std::size_t i = 0; i < k; ++i) expected.push_back(std::get<2>(keyed[i]));
        std::sort(expected.begin(), expected.end());
        mismatches += select_pruned(words, r) != expected;
    }
    c.expect(mismatches == 0, std::to_string(mismatches) + " top-k mismatches");

    double worst = 0.0;
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 6 + rng() % 12, L = 1 + rng() % 3, H = 1 + rng() % 3;
        AttentionTensor a(L, H, n);
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t t = 0; t < n; ++t) {
                    double z = 0.0;
                    for (std::size_t kk = 0; kk <= t; ++kk) z += (a.at(l, h, t, kk) = u(rng));
                    for (std::size_t kk = 0; kk <= t; ++kk) a.at(l, h, t, kk) /= z;
                }
        std::vector<std::size_t> image{0, 1, 2}, cot, layers, heads;
        for (std::size_t t = 3; t < n; ++t) cot.push_back(t);
        for (std::size_t l = 0; l < L; ++l) layers.push_back(l);
        for (std::size_t h = 0; h < H; ++h) heads.push_back(h);
        const auto s = image_attention_scores(a, image, cot, layers, heads);
        for (std::size_t i = 0; i < cot.size(); ++i) {
            worst = std::max(worst, std::abs(s[i].score - oracle::brute_force_score(a, cot[i], image, layers, heads)));
        }
    }
    c.expect(worst <= 1e-9, "score deviation " + fmt(worst));

    std::vector<WordScore> ten;
    for (std::size_t i = 0; i < 10; ++i) ten.push_back({{i, i + 1}, u(rng)});
    const auto removed = select_pruned(ten, 0.2).size();
    c.expect(removed == 2, "r = 0.2 on 10 words removed " + std::to_string(removed));
    c.note("0 top-k mismatches, score dev " + fmt(worst, 3) + ", r=0.2 of 10 removes " + std::to_string(removed));
    return c.outcome();
}

// 7. One training epoch moves both margins and the loss the right way.
Outcome training_effect() {
    Check c;
    auto s = test_support::training_setup("table", 200);
    const auto before = combined_batch_loss(*s->ref, *s->ref, s->records, 0.1, 0.1);
    const auto trained = train_rcdpo(*s->ref, *s->ref, s->records, s->config, 77);
    const auto after = combined_batch_loss(*trained.model, *s->ref, s->records, 0.1, 0.1);
    c.expect(after.mean.rc_margin > before.mean.rc_margin, "rc margin did not increase");
    c.expect(after.mean.dpo_margin > before.mean.dpo_margin, "dpo margin did not increase");
    c.expect(after.mean.combined < before.mean.combined, "combined loss did not decrease");

    TrainConfig zero = s->config, dpo = s->config;
    zero.hyper.lambda_rc = 0.0;
    dpo.objective = "dpo";
    const auto a = train_rcdpo(*s->ref, *s->ref, s->records, zero, 77);
    const auto b = train_rcdpo(*s->ref, *s->ref, s->records, dpo, 77);
    bool same_series = a.log.size() == b.log.size();
    for (std::size_t i = 0; same_series && i < a.log.size(); ++i) {
        same_series = a.log[i].loss.dpo_loss == b.log[i].loss.dpo_loss && a.log[i].loss.combined == b.log[i].loss.combined;
    }
    c.expect(bits(a.model->parameters()) == bits(b.model->parameters()), "lambda = 0 parameters differ from dpo-only");
    c.expect(same_series, "lambda = 0 loss series differs from dpo-only");
    c.note("rc margin " + fmt(before.mean.rc_margin, 3) + " -> " + fmt(after.mean.rc_margin, 3) + ", dpo margin " +
           fmt(before.mean.dpo_margin, 3) + " -> " + fmt(after.mean.dpo_margin, 3) + ", combined " +
           fmt(before.mean.combined, 5) + " -> " + fmt(after.mean.combined, 5));
    return c.outcome();
}

// 8. Metric fixtures.
Outcome metric_fixtures() {
    Check c;
    const fs::path dir = fs::path(RCDPO_SOURCE_DIR) / "data" / "fixtures";
    const auto ch = chair(load_chair_fixture(dir / "chair.jsonl"));
    const auto po = pope_metrics(load_pope_fixture(dir / "pope.jsonl"));
    c.expect(std::abs(ch.sentence - 50.0) <= 1e-9, "C_S " + fmt(ch.sentence));
    c.expect(std::abs(ch.instance - 33.33) <= 0.01, "C_I " + fmt(ch.instance));
    for (double v : {po.accuracy, po.precision, po.recall, po.f1}) c.expect(std::abs(v - 0.5) <= 1e-12, "pope " + fmt(v));
    c.note("C_S " + fmt(ch.sentence, 4) + ", C_I " + fmt(ch.instance, 4) + ", pope 0.5 x4");
    return c.outcome();
}

// 9. Format roundtrip and malformed inputs.
Outcome format_roundtrip() {
    Check c;
    const Vocabulary v({"img:a"}, {"the", "sky", "is", "blue", "grass", "green", "fris", "##bee"});
    std::mt19937_64 rng(909);
    int mismatches = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto t = oracle::random_trajectory(rng, v.text_begin(), v.size(), 5, 6);
        mismatches += !(parse_response(render_trajectory(t, v), v) == t);
    }
    c.expect(mismatches == 0, std::to_string(mismatches) + " roundtrip mismatches");
    const auto corpus = test_support::malformed_responses();
    c.expect(corpus.size() >= 10, "corpus too small");
    int structured = 0;
    for (const auto& text : corpus) {
        try {
            parse_response(text, v);
            c.expect(false, "accepted malformed input");
        } catch (const MalformedResponse&) {
            ++structured;
        } catch (const std::exception& e) {
            c.expect(false, std::string("unstructured error: ") + e.what());
        }
    }
    c.note("1000 roundtrips, " + std::to_string(structured) + "/" + std::to_string(corpus.size()) +
           " malformed inputs rejected with MalformedResponse");
    return c.outcome();
}

// 10. The four stages twice with one seed; artifacts must match byte for byte.
Outcome end_to_end() {
    Check c;
    const fs::path root = fs::temp_directory_path() / "rcdpo_acceptance";
    fs::remove_all(root);
    std::map<std::string, std::string> hashes[2];
    for (int run = 0; run < 2; ++run) {
        const fs::path out = root / ("run" + std::to_string(run));
        for (const char* stage : {"sft", "build-pref", "train", "diagnose"}) {
            std::ostringstream so, se;
            const int code = cli::run({stage, "--out", out.string(), "--seed", "7"}, so, se);
            if (code != cli::kOk) {
                c.expect(false, std::string(stage) + " exited " + std::to_string(code) + ": " + se.str().substr(0, 200));
                return c.outcome();
            }
        }
        for (const auto& e : fs::directory_iterator(out)) hashes[run][e.path().filename().string()] = sha256_file(e.path());
    }
    c.expect(hashes[0] == hashes[1], "artifacts differ between runs");
    for (const auto* name : {"policy.ckpt.json", "pref.jsonl", "sft.ckpt.json", "segment_loss_ratio.csv", "diagnose.json"}) {
        c.expect(hashes[0].count(name) == 1, std::string("missing ") + name);
    }
    // Shape of the diagnostic series: header plus one row per training step.
    std::ifstream csv(root / "run0" / "segment_loss_ratio.csv");
    std::string header, line;
    std::getline(csv, header);
    std::size_t rows = 0;
    while (std::getline(csv, line)) rows += !line.empty();
    std::ifstream log(root / "run0" / "train_log.jsonl");
    std::size_t steps = 0;
    while (std::getline(log, line)) steps += !line.empty();
    c.expect(header == "step,cot_ratio,answer_ratio,dpo_loss,rc_loss,combined", "csv header " + header);
    c.expect(rows == steps && rows > 0, "csv rows " + std::to_string(rows) + " vs steps " + std::to_string(steps));
    c.note(std::to_string(hashes[0].size()) + " artifacts identical, " + std::to_string(rows) + " diagnostic rows");
    return c.outcome();
}

struct Criterion {
    const char* name;
    double budget_seconds;
    Outcome (*run)();
};

}  // namespace

int main() {
    const Criterion criteria[] = {
        {"zero-margin anchor", 1.0, zero_margin},
        {"chain-rule identity", 5.0, chain_rule},
        {"gradient correctness", 30.0, gradients},
        {"search oracle optimality", 60.0, search_optimality},
        {"backprop mean property", 10.0, backprop_mean},
        {"pruner oracle equivalence", 10.0, pruner_oracle},
        {"training effect", 180.0, training_effect},
        {"metric fixtures", 1.0, metric_fixtures},
        {"format roundtrip", 5.0, format_roundtrip},
        {"end-to-end pipeline", 300.0, end_to_end},
    };
    int failed = 0;
    int index = 0;
    for (const auto& cr : criteria) {
        ++index;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = cr.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (secs > cr.budget_seconds) {
            o.pass = false;
            o.detail += (o.detail.empty() ? "" : "; ") + std::string("over time budget");
        }
        failed += !o.pass;
        std::printf("%s %2d %-26s %8.3fs (budget %gs)  %s\n", o.pass ? "PASS" : "FAIL", index, cr.name, secs,
                    cr.budget_seconds, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%d criteria passed\n", 10 - failed, 10);
    return failed == 0 ? 0 : 1;
}
