#include "rcdpo/mcts/mcts.hpp"

#include <algorithm>
#include <cmath>

#include "rcdpo/errors.hpp"

namespace rcdpo {

namespace {

nlohmann::json node_json(const SearchNode& n) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : n.partial_cot) {
        nlohmann::json ids = nlohmann::json::array();
        for (auto t : s.tokens) ids.push_back(t.id);
        steps.push_back(std::move(ids));
    }
    nlohmann::json children = nlohmann::json::array();
    for (const auto& c : n.children) children.push_back(node_json(*c));
    return {{"steps", std::move(steps)}, {"N", n.N},          {"Q", n.Q},
            {"terminal", n.is_terminal}, {"children", std::move(children)}};
}

bool has_child(const SearchNode& node, bool terminal, const ReasoningStep* step) {
    for (const auto& c : node.children) {
        if (c->is_terminal != terminal) continue;
        if (terminal) return true;
        if (c->partial_cot.back() == *step) return true;
    }
    return false;
}

SearchNode* add_child(SearchNode& node, const std::optional<ReasoningStep>& step) {
    auto child = std::make_unique<SearchNode>();
    child->partial_cot = node.partial_cot;
    child->parent = &node;
    if (step) {
        child->partial_cot.push_back(*step);
    } else {
        child->is_terminal = true;
    }
    node.children.push_back(std::move(child));
    return node.children.back().get();
}

bool expandable(const SearchNode& n, std::size_t max_children, std::size_t max_depth) {
    return !n.is_terminal && !n.expansion_closed && n.depth() < max_depth && n.children.size() < max_children;
}

}  // namespace

nlohmann::json SearchTree::to_json() const { return root ? node_json(*root) : nlohmann::json(nullptr); }

SearchNode& ucb_select(SearchNode& node, double alpha, double epsilon) {
    if (node.children.empty()) throw NoChildren("node has no children");
    const double log_n = std::log(static_cast<double>(std::max<std::size_t>(node.N, 1)));
    SearchNode* best = nullptr;
    double best_score = -INFINITY;
    for (const auto& c : node.children) {
        const double score = c->Q + alpha * std::sqrt(log_n / (static_cast<double>(c->N) + epsilon));
        if (best == nullptr || score > best_score) {
            best = c.get();
            best_score = score;
        }
    }
    return *best;
}

std::vector<SearchNode*> expand(SearchNode& node, const StructuredDecoder& decoder, const MultimodalInput& x,
                                std::size_t max_children, std::size_t max_depth, ExpandMode mode, Rng& rng,
                                const SearchOptions& options) {
    if (node.is_terminal) throw std::invalid_argument("cannot expand a terminal node");
    if (node.children.size() >= max_children) {
        throw ExpansionExhausted("node already has " + std::to_string(max_children) + " children");
    }
    if (node.depth() >= max_depth) throw std::invalid_argument("cannot expand a node at max_depth");
    if (node.expansion_closed) return {};

    if (mode == ExpandMode::kEnumerate) {
        const auto options_k = decoder.top_steps(x, node.partial_cot, max_children, true);
        for (const auto& opt : options_k) {
            if (has_child(node, !opt.step, opt.step ? &*opt.step : nullptr)) continue;
            return {add_child(node, opt.step)};
        }
        node.expansion_closed = true;
        return {};
    }

    for (std::size_t attempt = 0; attempt < options.expand_attempts; ++attempt) {
        auto step = decoder.sample_step(x, node.partial_cot, options.temperature, rng);
        if (has_child(node, !step, step ? &*step : nullptr)) continue;
        return {add_child(node, step)};
    }
    node.expansion_closed = true;
    return {};
}

RolloutResult simulate(SearchNode& node, const StructuredDecoder& decoder, const Verifier& verifier,
                       const MultimodalInput& x, std::size_t max_depth, Rng& rng, const SearchOptions& options) {
    RolloutResult out;
    if (node.is_terminal) {
        out.trajectory.steps = node.partial_cot;
        if (!node.answer) node.answer = decoder.sample_answer(x, node.partial_cot, options.temperature, rng);
        out.trajectory.answer_tokens = *node.answer;
    } else {
        out.trajectory = decoder.complete(x, node.partial_cot, max_depth, options.temperature, rng);
    }
    out.reward = verifier.score(x, out.trajectory).value;
    if (options.normalize_reward) out.reward /= 2.0;
    return out;
}

void backprop(std::span<SearchNode* const> path, double reward) {
    for (SearchNode* n : path) {
        n->N += 1;
        n->Q += (reward - n->Q) / static_cast<double>(n->N);
    }
}

SearchResult search(const MultimodalInput& x, const StructuredDecoder& decoder, const Verifier& verifier,
                    const HyperParams& params, std::uint64_t seed, const SearchOptions& options) {
    params.validate();
    Rng rng(seed);
    SearchResult result;
    result.tree.root = std::make_unique<SearchNode>();
    SearchNode* root = result.tree.root.get();
    std::optional<RolloutOverflow> last_overflow;
    bool have_best = false;

    for (std::size_t it = 0; it < params.iterations; ++it) {
        std::vector<SearchNode*> path{root};
        SearchNode* node = root;
        while (!expandable(*node, params.max_children, params.max_depth) && !node->children.empty()) {
            node = &ucb_select(*node, params.ucb_alpha, params.ucb_epsilon);
            path.push_back(node);
        }
        if (expandable(*node, params.max_children, params.max_depth)) {
            auto added = expand(*node, decoder, x, params.max_children, params.max_depth, options.mode, rng, options);
            if (!added.empty()) {
                node = added.front();
                path.push_back(node);
            } else if (!node->children.empty()) {
                // Closed for expansion just now: continue the descent next iteration.
                node = &ucb_select(*node, params.ucb_alpha, params.ucb_epsilon);
                path.push_back(node);
            }
        }
        RolloutResult r;
        try {
            r = simulate(*node, decoder, verifier, x, params.max_depth, rng, options);
        } catch (const RolloutOverflow& e) {
            last_overflow = e;
            ++result.failed_iterations;
            continue;
        }
        backprop(path, r.reward);
        if (!have_best || r.reward > result.score) {
            result.trajectory = r.trajectory;
            result.score = r.reward;
            have_best = true;
        }
        result.rollouts.push_back(std::move(r));
    }
    if (!have_best) {
        if (last_overflow) throw *last_overflow;
        throw RolloutOverflow("no search iteration completed");
    }
    return result;
}

}  // namespace rcdpo
