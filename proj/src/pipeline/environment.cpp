#include "rcdpo/pipeline/environment.hpp"

#include <algorithm>
#include <cmath>

#include "rcdpo/core/rng.hpp"
#include "rcdpo/errors.hpp"
#include "rcdpo/pruner/pruner.hpp"

namespace rcdpo {

namespace {

const std::vector<std::string> kObjects = {"dog", "cat", "car", "tree", "ball", "cup", "bird", "book", "frisbee"};

std::vector<std::string> image_words() {
    std::vector<std::string> w{"img:bg"};
    for (const auto& o : kObjects) w.push_back("img:" + o);
    return w;
}

std::vector<std::string> text_words() {
    std::vector<std::string> w{"is", "there", "a", "?", "i", "see", "and", "so", "no", "yes"};
    for (const auto& o : kObjects) {
        if (o == "frisbee") {
            w.push_back("fris");
            w.push_back("##bee");
        } else {
            w.push_back(o);
        }
    }
    return w;
}

std::size_t pick(Rng& rng, std::size_t n) { return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)); }

// Fisher-Yates on top of uniform01 so the order is the same on every standard library.
template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[pick(rng, i)]);
}

void append(TokenSeq& dst, const TokenSeq& src) { dst.insert(dst.end(), src.begin(), src.end()); }

}  // namespace

SyntheticEnvironment::SyntheticEnvironment() : vocab_(image_words(), text_words()), objects_(kObjects) {}

TokenSeq SyntheticEnvironment::object_tokens(const std::string& object) const {
    if (object == "frisbee") return vocab_.encode("fris ##bee");
    return vocab_.encode(object);
}

std::vector<Task> SyntheticEnvironment::tasks(std::size_t n, std::uint64_t seed) const {
    std::vector<Task> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, i));
        std::vector<std::string> pool = objects_;
        shuffle(pool, rng);
        Task t;
        t.objects = {pool[0], pool[1]};
        t.present = uniform01(rng) < 0.5;
        t.object = t.present ? t.objects[pick(rng, 2)] : pool[2 + pick(rng, pool.size() - 2)];

        std::vector<std::string> img{"img:bg", "img:" + t.objects[0], "img:" + t.objects[1]};
        shuffle(img, rng);
        for (const auto& w : img) t.input.image_tokens.push_back(vocab_.at(w));
        t.input.prompt_tokens = vocab_.encode("is there a");
        append(t.input.prompt_tokens, object_tokens(t.object));
        t.input.prompt_tokens.push_back(vocab_.at("?"));
        t.target_answer = vocab_.encode(t.present ? "yes" : "no");
        for (const auto& o : t.objects) t.grounding.push_back(object_tokens(o).front());
        out.push_back(std::move(t));
    }
    return out;
}

MockVerifier SyntheticEnvironment::verifier(const std::vector<Task>& tasks) const {
    MockVerifier v;
    for (const auto& t : tasks) v.expect(t.input, {t.target_answer, t.grounding});
    return v;
}

namespace {

Trajectory describe(const SyntheticEnvironment& env, const std::vector<std::string>& seen, const std::string& query) {
    const auto& vocab = env.vocab();
    Trajectory tr;
    ReasoningStep look;
    look.tokens = vocab.encode("i see a");
    append(look.tokens, env.object_tokens(seen[0]));
    look.tokens.push_back(vocab.at("and"));
    look.tokens.push_back(vocab.at("a"));
    append(look.tokens, env.object_tokens(seen[1]));
    const bool yes = std::find(seen.begin(), seen.end(), query) != seen.end();
    ReasoningStep conclude;
    conclude.tokens = vocab.encode(yes ? "so there is a" : "so there is no");
    append(conclude.tokens, env.object_tokens(query));
    tr.steps = {look, conclude};
    tr.answer_tokens = vocab.encode(yes ? "yes" : "no");
    return tr;
}

}  // namespace

Trajectory SyntheticEnvironment::grounded_trajectory(const Task& task) const {
    return describe(*this, task.objects, task.object);
}

Trajectory SyntheticEnvironment::hallucinated_trajectory(const Task& task, std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<std::string> pool = objects_;
    shuffle(pool, rng);
    // Keep one real object half of the time so hallucinations stay plausible.
    std::vector<std::string> seen{pool[0], pool[1]};
    if (uniform01(rng) < 0.5) seen[0] = task.objects[pick(rng, 2)];
    if (seen[0] == seen[1]) seen[1] = pool[2];
    return describe(*this, seen, task.object);
}

std::vector<SftRecord> SyntheticEnvironment::demonstrations(const std::vector<Task>& tasks, double hallucination_rate,
                                                            std::uint64_t seed) const {
    std::vector<SftRecord> out;
    out.reserve(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        Rng rng(derive_seed(seed, i));
        const bool bad = uniform01(rng) < hallucination_rate;
        out.push_back({tasks[i].input, bad ? hallucinated_trajectory(tasks[i], rng()) : grounded_trajectory(tasks[i])});
    }
    return out;
}

std::vector<PreferenceRecord> SyntheticEnvironment::preference_records(std::size_t n, std::uint64_t seed) const {
    const auto ts = tasks(n, seed);
    std::vector<PreferenceRecord> out;
    out.reserve(n);
    for (const Task& t : ts) {
        const Trajectory good = grounded_trajectory(t);
        const TokenSeq cot = good.cot_tokens();
        // Object words stand in for the visually salient words the pruner targets.
        const auto spans = word_spans(cot, vocab_);
        std::vector<WordScore> scores;
        for (const auto& sp : spans) {
            const Token first = cot[sp.start];
            const bool object = std::any_of(objects_.begin(), objects_.end(),
                                            [&](const std::string& o) { return object_tokens(o).front() == first; });
            scores.push_back({sp, object ? 1.0 : 0.0});
        }
        PreferenceRecord r;
        r.input = t.input;
        r.cot_w = cot;
        r.ans_w = good.answer_segment();
        r.cot_l = drop_empty_steps(prune(cot, scores, 0.3));
        r.ans_l = answer_segment(vocab_.encode(t.present ? "no" : "yes"));
        out.push_back(std::move(r));
    }
    return out;
}

namespace {

/// Scripted policy of the enumerable environment.
class ScriptedPolicy final : public PolicyModel {
public:
    explicit ScriptedPolicy(const Vocabulary& vocab) : vocab_(vocab) {
        for (int level = 0; level < 2; ++level) {
            for (int j = 0; j < 3; ++j) {
                options_[level][j] = vocab.at(std::string(1, static_cast<char>('a' + level)) + std::to_string(j + 1));
            }
        }
        yes_ = vocab.at("yes");
        no_ = vocab.at("no");
    }

    std::uint32_t vocab_size() const noexcept override { return vocab_.size(); }
    std::span<const double> parameters() const noexcept override { return {}; }
    nlohmann::json architecture() const override { return {{"kind", "scripted"}}; }

    std::vector<double> next_logits(std::span<const Token> context) const override {
        check_tokens(context);
        std::vector<double> logits(vocab_.size(), kOff);
        const Token last = context.back();
        std::size_t steps = 0;
        bool in_think = false, after_think = false;
        Token last_option{0};
        for (auto t : context) {
            if (t == markers::kThinkOpen) in_think = true;
            if (t == markers::kThinkClose) after_think = true;
            if (t == markers::kStepEnd) ++steps;
            if (is_option(t)) last_option = t;
        }
        auto on = [&](Token t, double lp) { logits[t.id] = lp; };
        if (!in_think) {
            on(markers::kThinkOpen, 0.0);
        } else if (!after_think) {
            if (last == markers::kThinkOpen || last == markers::kStepEnd) {
                on(steps < 2 ? markers::kStepHeader : markers::kThinkClose, 0.0);
            } else if (last == markers::kStepHeader) {
                const std::size_t level = std::min<std::size_t>(steps, 1);
                for (int j = 0; j < 3; ++j) on(options_[level][j], std::log(kProbs[j]));
            } else {
                on(markers::kStepEnd, 0.0);
            }
        } else if (last == markers::kThinkClose) {
            on(markers::kAnswerOpen, 0.0);
        } else if (last == markers::kAnswerOpen) {
            on(last_option == options_[1][1] ? no_ : yes_, 0.0);
        } else {
            on(markers::kAnswerClose, 0.0);
        }
        return logits;
    }

    std::vector<double> token_logprobs(std::span<const Token> context, std::span<const Token> target) const override {
        check_tokens(target);
        TokenSeq ctx(context.begin(), context.end());
        std::vector<double> out;
        for (auto t : target) {
            const auto lp = log_softmax(next_logits(ctx));
            out.push_back(lp[t.id]);
            ctx.push_back(t);
        }
        return out;
    }

    void accumulate_logprob_gradient(std::span<const Token>, std::span<const Token>, double,
                                     std::span<double>) const override {
        throw Unsupported("the scripted policy has no parameters");
    }

    std::unique_ptr<PolicyModel> clone() const override { return std::make_unique<ScriptedPolicy>(*this); }

protected:
    std::span<double> params_mut() noexcept override { return {}; }

private:
    static constexpr double kOff = -40.0;
    static constexpr double kProbs[3] = {0.5, 0.3, 0.2};

    bool is_option(Token t) const {
        for (const auto& lvl : options_) {
            if (std::find(std::begin(lvl), std::end(lvl), t) != std::end(lvl)) return true;
        }
        return false;
    }

    const Vocabulary& vocab_;
    Token options_[2][3];
    Token yes_, no_;
};

}  // namespace

EnumerableEnvironment::EnumerableEnvironment()
    : vocab_({"img:scene"}, {"q", "a1", "a2", "a3", "b1", "b2", "b3", "yes", "no"}) {
    input_.image_tokens = {vocab_.at("img:scene")};
    input_.prompt_tokens = {vocab_.at("q")};
    policy_ = std::make_unique<ScriptedPolicy>(vocab_);
    // The least likely first step is the only grounded one.
    verifier_.expect(input_, {vocab_.encode("yes"), {vocab_.at("a3")}});
}

}  // namespace rcdpo
