#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcdpo/core/hyperparams.hpp"
#include "rcdpo/core/rng.hpp"
#include "rcdpo/core/trajectory.hpp"
#include "rcdpo/policy/sampling.hpp"
#include "rcdpo/verifier/verifier.hpp"

namespace rcdpo {

/// A partial CoT in the search tree. A terminal node holds the same steps as
/// its parent and stands for "close the CoT here".
struct SearchNode {
    std::vector<ReasoningStep> partial_cot;
    std::size_t N = 0;
    double Q = 0.0;
    std::vector<std::unique_ptr<SearchNode>> children;
    bool is_terminal = false;
    SearchNode* parent = nullptr;
    bool expansion_closed = false;        // no further distinct children exist
    std::optional<TokenSeq> answer;       // terminal nodes: answer of the first rollout

    std::size_t depth() const noexcept { return partial_cot.size(); }
};

struct SearchTree {
    std::unique_ptr<SearchNode> root;

    /// Depth-first nested dump: {"steps": [[ids...]...], "N", "Q", "terminal", "children": [...]}.
    nlohmann::json to_json() const;
};

struct RolloutResult {
    Trajectory trajectory;
    double reward = 0.0;
};

enum class ExpandMode { kSample, kEnumerate };

struct SearchOptions {
    ExpandMode mode = ExpandMode::kSample;
    double temperature = 1.0;
    DecodeLimits limits;
    std::size_t expand_attempts = 8;  // sampled duplicates tolerated before a node counts as closed
    bool normalize_reward = false;    // divide verifier scores by 2
};

/// argmax_child Q + alpha * sqrt(ln N / (N_child + epsilon)); earliest child on ties.
/// Throws NoChildren.
SearchNode& ucb_select(SearchNode& node, double alpha, double epsilon);

/// Adds at most one new child. Sample mode draws a step from the policy and
/// retries duplicates; enumerate mode takes the next of the top-`max_children`
/// steps. A node without remaining distinct steps is marked expansion_closed
/// and yields an empty list. Throws ExpansionExhausted at max_children.
std::vector<SearchNode*> expand(SearchNode& node, const StructuredDecoder& decoder, const MultimodalInput& x,
                                std::size_t max_children, std::size_t max_depth, ExpandMode mode, Rng& rng,
                                const SearchOptions& options = {});

/// Completes the node's CoT (forcing THINK_CLOSE at max_depth steps), samples
/// an answer and scores it. Terminal nodes reuse their cached answer.
RolloutResult simulate(SearchNode& node, const StructuredDecoder& decoder, const Verifier& verifier,
                       const MultimodalInput& x, std::size_t max_depth, Rng& rng, const SearchOptions& options = {});

/// N += 1, Q += (R - Q) / N for every node of `path`.
void backprop(std::span<SearchNode* const> path, double reward);

struct SearchResult {
    Trajectory trajectory;
    double score = 0.0;
    SearchTree tree;
    std::vector<RolloutResult> rollouts;
    std::size_t failed_iterations = 0;
};

SearchResult search(const MultimodalInput& x, const StructuredDecoder& decoder, const Verifier& verifier,
                    const HyperParams& params, std::uint64_t seed, const SearchOptions& options = {});

}  // namespace rcdpo
