#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rcdpo/core/token.hpp"
#include "rcdpo/core/trajectory.hpp"
#include "rcdpo/policy/policy.hpp"
#include "rcdpo/verifier/verifier.hpp"

namespace rcdpo {

/// One object-existence question about an abstract image.
struct Task {
    MultimodalInput input;
    std::string object;                // the queried object
    bool present = false;
    std::vector<std::string> objects;  // objects actually in the image
    TokenSeq target_answer;            // "yes" or "no"
    std::vector<Token> grounding;      // first token of every present object
};

/// Bundled toy world: images are short runs of "img:<object>" tokens plus a
/// background token, questions are "is there a <object> ?", and answers are
/// yes/no. "frisbee" is spelled as two subword tokens ("fris ##bee").
class SyntheticEnvironment {
public:
    SyntheticEnvironment();

    const Vocabulary& vocab() const noexcept { return vocab_; }
    const std::vector<std::string>& objects() const noexcept { return objects_; }

    /// Text tokens of an object name.
    TokenSeq object_tokens(const std::string& object) const;

    std::vector<Task> tasks(std::size_t n, std::uint64_t seed) const;
    MockVerifier verifier(const std::vector<Task>& tasks) const;

    /// Grounded reasoning for a task: list what the image shows, then conclude.
    Trajectory grounded_trajectory(const Task& task) const;
    /// Reasoning about a made-up object list; the answer follows that list.
    Trajectory hallucinated_trajectory(const Task& task, std::uint64_t seed) const;

    /// Demonstrations used to teach the output format. A fraction
    /// `hallucination_rate` of them is hallucinated.
    std::vector<SftRecord> demonstrations(const std::vector<Task>& tasks, double hallucination_rate,
                                          std::uint64_t seed) const;

    /// Preference records built without search: grounded CoT and correct answer
    /// as the positive, the grounded CoT with its object words removed as c_l,
    /// and a hallucinated answer as a_l.
    std::vector<PreferenceRecord> preference_records(std::size_t n, std::uint64_t seed) const;

private:
    Vocabulary vocab_;
    std::vector<std::string> objects_;
};

/// Tiny scripted environment whose every trajectory can be listed: two
/// reasoning levels with three candidate steps each (9 trajectories). The
/// answer is fixed by the last step. Logits of off-script tokens are -40.
class EnumerableEnvironment {
public:
    EnumerableEnvironment();
    EnumerableEnvironment(const EnumerableEnvironment&) = delete;
    EnumerableEnvironment& operator=(const EnumerableEnvironment&) = delete;

    const Vocabulary& vocab() const noexcept { return vocab_; }
    const MultimodalInput& input() const noexcept { return input_; }
    const PolicyModel& policy() const noexcept { return *policy_; }
    const Verifier& verifier() const noexcept { return verifier_; }

    static constexpr std::size_t kLevels = 2;
    static constexpr std::size_t kBranching = 3;

private:
    Vocabulary vocab_;
    MultimodalInput input_;
    std::unique_ptr<PolicyModel> policy_;
    MockVerifier verifier_;
};

}  // namespace rcdpo
