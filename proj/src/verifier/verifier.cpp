#include "rcdpo/verifier/verifier.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <semaphore>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rcdpo/core/format.hpp"
#include "rcdpo/errors.hpp"

namespace rcdpo {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
}

}  // namespace

VerifierScore Verifier::score(const MultimodalInput& x, const Trajectory& trajectory) const {
    if (!trajectory.complete()) throw IncompleteTrajectory("verifier requires a complete trajectory");
    auto s = score_complete(x, trajectory);
    if (s.value < 0 || s.value > 2) throw MalformedJudgeReply("score outside {0,1,2}");
    return s;
}

void MockVerifier::expect(const MultimodalInput& x, Expectation expectation) {
    table_[{x.image_tokens, x.prompt_tokens}] = std::move(expectation);
}

VerifierScore MockVerifier::score_complete(const MultimodalInput& x, const Trajectory& trajectory) const {
    auto it = table_.find({x.image_tokens, x.prompt_tokens});
    if (it == table_.end()) throw std::invalid_argument("mock verifier has no expectation for this input");
    const auto& e = it->second;
    if (trajectory.answer_tokens != e.answer) return {0, "answer mismatch"};
    for (const auto& step : trajectory.steps) {
        for (auto t : step.tokens) {
            if (std::find(e.grounding.begin(), e.grounding.end(), t) != e.grounding.end()) {
                return {2, "answer matches and reasoning is grounded"};
            }
        }
    }
    return {1, "answer matches without grounding"};
}

ConstantVerifier::ConstantVerifier(int value) : value_(value) {
    if (value < 0 || value > 2) throw std::invalid_argument("constant score must be 0, 1 or 2");
}

VerifierScore ConstantVerifier::score_complete(const MultimodalInput&, const Trajectory&) const {
    return {value_, "constant"};
}

VerifierScore parse_judge_reply(std::string_view text) {
    std::vector<std::string_view> lines;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        lines.push_back(text.substr(0, nl));
        if (nl == std::string_view::npos) break;
        text.remove_prefix(nl + 1);
    }
    constexpr std::string_view kScore = "Score:";
    constexpr std::string_view kReason = "Reason:";
    for (std::size_t i = lines.size(); i-- > 0;) {
        const auto line = trim(lines[i]);
        if (!line.starts_with(kScore)) continue;
        const auto value = trim(line.substr(kScore.size()));
        if (value.size() != 1 || value[0] < '0' || value[0] > '2') {
            throw MalformedJudgeReply("score '" + std::string(value) + "' is not 0, 1 or 2");
        }
        VerifierScore out{value[0] - '0', {}};
        for (std::size_t j = i; j-- > 0;) {
            const auto r = trim(lines[j]);
            if (r.starts_with(kReason)) {
                out.reason = std::string(trim(r.substr(kReason.size())));
                break;
            }
        }
        return out;
    }
    throw MalformedJudgeReply("reply has no 'Score:' line");
}

std::string render_judge_prompt(std::string_view image_ref, std::string_view question, std::string_view answer) {
    std::string out(judge_prompt_template());
    replace_all(out, "{image_ref}", image_ref);
    replace_all(out, "{question}", question);
    replace_all(out, "{answer}", answer);
    return out;
}

struct RemoteVerifier::Impl {
    RemoteVerifierConfig config;
    const Vocabulary& vocab;
    std::string host;
    std::string path;
    std::counting_semaphore<1024> slots;

    Impl(RemoteVerifierConfig c, const Vocabulary& v)
        : config(std::move(c)), vocab(v), slots(static_cast<std::ptrdiff_t>(config.max_in_flight)) {}
};

RemoteVerifier::RemoteVerifier(RemoteVerifierConfig config, const Vocabulary& vocab) {
    if (config.max_in_flight == 0 || config.max_in_flight > 1024) {
        throw std::invalid_argument("max_in_flight must be in [1, 1024]");
    }
    const auto scheme = config.url.find("://");
    if (scheme == std::string::npos) throw std::invalid_argument("verifier url needs a scheme: " + config.url);
    const auto slash = config.url.find('/', scheme + 3);
    auto host = config.url.substr(0, slash);
    auto path = slash == std::string::npos ? std::string("/") : config.url.substr(slash);
    impl_ = std::make_unique<Impl>(std::move(config), vocab);
    impl_->host = std::move(host);
    impl_->path = std::move(path);
}

RemoteVerifier::~RemoteVerifier() = default;

VerifierScore RemoteVerifier::score_complete(const MultimodalInput& x, const Trajectory& trajectory) const {
    const nlohmann::json body = {{"question", impl_->vocab.decode(x.prompt_tokens)},
                                 {"answer", render_trajectory(trajectory, impl_->vocab)},
                                 {"image_ref", impl_->vocab.decode(x.image_tokens)}};
    const std::string payload = body.dump();

    impl_->slots.acquire();
    struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
    } release{impl_->slots};

    httplib::Client client(impl_->host);
    const auto timeout = std::chrono::duration<double>(impl_->config.timeout_seconds);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

    std::string last_error;
    double backoff = impl_->config.backoff_seconds;
    for (std::size_t attempt = 0; attempt <= impl_->config.retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
            backoff *= 2.0;
        }
        auto res = client.Post(impl_->path, payload, "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        return parse_judge_reply(res->body);
    }
    throw RemoteUnavailable(impl_->host + impl_->path + " failed after " +
                            std::to_string(impl_->config.retries + 1) + " attempts: " + last_error);
}

}  // namespace rcdpo
