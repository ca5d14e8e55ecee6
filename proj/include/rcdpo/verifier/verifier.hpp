#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rcdpo/core/token.hpp"
#include "rcdpo/core/trajectory.hpp"

namespace rcdpo {

struct VerifierScore {
    int value = 0;  // 0, 1 or 2
    std::string reason;
};

/// S(c, a; x). `score` rejects incomplete trajectories before delegating.
class Verifier {
public:
    virtual ~Verifier() = default;
    VerifierScore score(const MultimodalInput& x, const Trajectory& trajectory) const;

protected:
    virtual VerifierScore score_complete(const MultimodalInput& x, const Trajectory& trajectory) const = 0;
};

/// What the mock expects for one input.
struct Expectation {
    TokenSeq answer;
    std::vector<Token> grounding;
};

/// 2: answer matches and some CoT token is a grounding token; 1: answer
/// matches without grounding; 0: otherwise. Inputs must be registered first.
class MockVerifier final : public Verifier {
public:
    void expect(const MultimodalInput& x, Expectation expectation);
    std::size_t size() const noexcept { return table_.size(); }

protected:
    VerifierScore score_complete(const MultimodalInput& x, const Trajectory& trajectory) const override;

private:
    std::map<std::pair<TokenSeq, TokenSeq>, Expectation> table_;
};

class ConstantVerifier final : public Verifier {
public:
    explicit ConstantVerifier(int value);

protected:
    VerifierScore score_complete(const MultimodalInput&, const Trajectory&) const override;

private:
    int value_;
};

/// Reads the last "Score: N" line and the last "Reason:" line above it.
/// Throws MalformedJudgeReply when there is no Score line or N is not 0, 1 or 2.
VerifierScore parse_judge_reply(std::string_view text);

std::string_view judge_prompt_template() noexcept;
/// Fills {image_ref}, {question} and {answer} in the bundled template.
std::string render_judge_prompt(std::string_view image_ref, std::string_view question, std::string_view answer);

struct RemoteVerifierConfig {
    std::string url;                 // http://host:port/path
    std::size_t max_in_flight = 4;
    std::size_t retries = 2;
    double backoff_seconds = 0.25;   // doubled after each failed attempt
    double timeout_seconds = 30.0;
};

/// POSTs {"question","answer","image_ref"} and parses the reply body with
/// parse_judge_reply. Transport failures and non-200 replies are retried;
/// RemoteUnavailable once the retries are spent.
class RemoteVerifier final : public Verifier {
public:
    RemoteVerifier(RemoteVerifierConfig config, const Vocabulary& vocab);
    ~RemoteVerifier() override;

protected:
    VerifierScore score_complete(const MultimodalInput& x, const Trajectory& trajectory) const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace rcdpo
