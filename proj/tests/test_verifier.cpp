#include <gtest/gtest.h>

#include <atomic>
#include <mutex>
#include <random>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rcdpo/errors.hpp"
#include "rcdpo/verifier/verifier.hpp"

using namespace rcdpo;

namespace {

struct Fixture {
    Vocabulary vocab{{"img:sky"}, {"what", "color", "?", "the", "sky", "is", "blue", "red", "look"}};
    MultimodalInput x{vocab.encode("img:sky"), vocab.encode("what color ?")};

    Trajectory trajectory(const std::string& step, const std::string& answer) const {
        Trajectory t;
        t.steps.push_back({vocab.encode(step), true});
        t.answer_tokens = vocab.encode(answer);
        return t;
    }

    MockVerifier mock() const {
        MockVerifier m;
        m.expect(x, {vocab.encode("blue"), {vocab.at("sky")}});
        return m;
    }
};

// Local judge endpoint. `fail_first` requests get HTTP 500.
class JudgeServer {
public:
    JudgeServer(int fail_first, std::string reply) : fail_first_(fail_first), reply_(std::move(reply)) {
        server_.Post("/judge", [this](const httplib::Request& req, httplib::Response& res) {
            const int n = requests_++;
            {
                std::lock_guard lock(mu_);
                last_body_ = req.body;
            }
            if (n < fail_first_) {
                res.status = 500;
                return;
            }
            res.set_content(reply_, "text/plain");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~JudgeServer() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/judge"; }
    int requests() const { return requests_.load(); }
    std::string last_body() const {
        std::lock_guard lock(mu_);
        return last_body_;
    }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> requests_{0};
    int fail_first_;
    std::string reply_;
    mutable std::mutex mu_;
    std::string last_body_;
};

RemoteVerifierConfig fast_config(const std::string& url, std::size_t retries = 2) {
    RemoteVerifierConfig c;
    c.url = url;
    c.retries = retries;
    c.backoff_seconds = 0.01;
    c.timeout_seconds = 2.0;
    return c;
}

}  // namespace

TEST(MockVerifier, Rubric) {
    Fixture f;
    const auto m = f.mock();
    EXPECT_EQ(m.score(f.x, f.trajectory("the sky is blue", "blue")).value, 2);
    EXPECT_EQ(m.score(f.x, f.trajectory("look", "blue")).value, 1);
    EXPECT_EQ(m.score(f.x, f.trajectory("the sky is red", "red")).value, 0);
    EXPECT_EQ(m.score(f.x, f.trajectory("the sky is blue", "blue red")).value, 0);
}

TEST(MockVerifier, DeterministicAndRejectsIncompleteOrUnknownInputs) {
    Fixture f;
    const auto m = f.mock();
    const auto t = f.trajectory("the sky is blue", "blue");
    const auto a = m.score(f.x, t), b = m.score(f.x, t);
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.reason, b.reason);
    auto open = t;
    open.steps[0].terminated = false;
    EXPECT_THROW(m.score(f.x, open), IncompleteTrajectory);
    const MultimodalInput other{f.vocab.encode("img:sky"), f.vocab.encode("what ?")};
    EXPECT_THROW(m.score(other, t), std::invalid_argument);
}

TEST(ConstantVerifier, ReturnsItsValue) {
    Fixture f;
    EXPECT_EQ(ConstantVerifier(2).score(f.x, f.trajectory("look", "red")).value, 2);
    EXPECT_THROW(ConstantVerifier(3), std::invalid_argument);
}

TEST(JudgeReply, Fixtures) {
    const auto a = parse_judge_reply("Reason: fine\nScore: 2");
    EXPECT_EQ(a.value, 2);
    EXPECT_EQ(a.reason, "fine");
    EXPECT_EQ(parse_judge_reply("Reason: ok\nScore: 1").value, 1);
    EXPECT_THROW(parse_judge_reply("Score: 3"), MalformedJudgeReply);
    EXPECT_THROW(parse_judge_reply("Reason: nothing to score"), MalformedJudgeReply);
    EXPECT_THROW(parse_judge_reply("Score: two"), MalformedJudgeReply);
    EXPECT_THROW(parse_judge_reply("Score: 12"), MalformedJudgeReply);

    const auto trailing = parse_judge_reply("Step 1: looked\nReason: first\nScore: 0\n\nReason: revised  \nScore: 1   \n\n  \n");
    EXPECT_EQ(trailing.value, 1);
    EXPECT_EQ(trailing.reason, "revised");
    const auto crlf = parse_judge_reply("Reason: windows\r\nScore: 2\r\n");
    EXPECT_EQ(crlf.value, 2);
    EXPECT_EQ(crlf.reason, "windows");
    EXPECT_EQ(parse_judge_reply("Score: 0").reason, "");
}

TEST(JudgeReply, TotalOverArbitraryText) {
    std::mt19937_64 rng(99);
    const std::string alphabet = "Score:Reason 0123\n\r\t abc";
    for (int i = 0; i < 5000; ++i) {
        std::string s;
        const std::size_t n = rng() % 40;
        for (std::size_t j = 0; j < n; ++j) s += alphabet[rng() % alphabet.size()];
        try {
            const auto v = parse_judge_reply(s);
            EXPECT_GE(v.value, 0);
            EXPECT_LE(v.value, 2);
        } catch (const MalformedJudgeReply&) {
        }
    }
}

TEST(JudgePrompt, TemplateIsFilled) {
    const auto tpl = judge_prompt_template();
    for (auto key : {"{image_ref}", "{question}", "{answer}", "Score:", "Reason:"}) {
        EXPECT_NE(tpl.find(key), std::string_view::npos) << key;
    }
    const auto p = render_judge_prompt("img:sky", "what color ?", "<answer>\nblue\n</answer>");
    EXPECT_EQ(p.find("{question}"), std::string::npos);
    EXPECT_NE(p.find("what color ?"), std::string::npos);
}

TEST(RemoteVerifier, ScoresThroughTheEndpoint) {
    Fixture f;
    JudgeServer server(0, "Step 4: all good\nReason: consistent\nScore: 2\n");
    RemoteVerifier v(fast_config(server.url()), f.vocab);
    const auto s = v.score(f.x, f.trajectory("the sky is blue", "blue"));
    EXPECT_EQ(s.value, 2);
    EXPECT_EQ(s.reason, "consistent");
    const auto body = nlohmann::json::parse(server.last_body());
    EXPECT_EQ(body["question"], "what color ?");
    EXPECT_EQ(body["image_ref"], "img:sky");
    EXPECT_NE(body["answer"].get<std::string>().find("<answer>"), std::string::npos);
}

TEST(RemoteVerifier, RetriesTransientFailures) {
    Fixture f;
    JudgeServer server(2, "Reason: ok\nScore: 1");
    RemoteVerifier v(fast_config(server.url(), 2), f.vocab);
    EXPECT_EQ(v.score(f.x, f.trajectory("look", "blue")).value, 1);
    EXPECT_EQ(server.requests(), 3);
}

TEST(RemoteVerifier, GivesUpAfterRetries) {
    Fixture f;
    JudgeServer server(100, "Score: 1");
    RemoteVerifier v(fast_config(server.url(), 2), f.vocab);
    EXPECT_THROW(v.score(f.x, f.trajectory("look", "blue")), RemoteUnavailable);
    EXPECT_EQ(server.requests(), 3);
}

TEST(RemoteVerifier, UnreachableHostIsUnavailable) {
    Fixture f;
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }  // closed again: nothing listens there now
    RemoteVerifier v(fast_config("http://127.0.0.1:" + std::to_string(port) + "/judge", 1), f.vocab);
    EXPECT_THROW(v.score(f.x, f.trajectory("look", "blue")), RemoteUnavailable);
}

TEST(RemoteVerifier, MalformedReplyPropagates) {
    Fixture f;
    JudgeServer server(0, "I think it is fine.");
    RemoteVerifier v(fast_config(server.url()), f.vocab);
    EXPECT_THROW(v.score(f.x, f.trajectory("look", "blue")), MalformedJudgeReply);
}

TEST(RemoteVerifier, ConcurrentCallsRespectTheLimit) {
    Fixture f;
    JudgeServer server(0, "Reason: ok\nScore: 2");
    auto c = fast_config(server.url());
    c.max_in_flight = 2;
    RemoteVerifier v(c, f.vocab);
    std::vector<std::thread> threads;
    std::atomic<int> ok{0};
    for (int i = 0; i < 6; ++i) {
        threads.emplace_back([&] { ok += v.score(f.x, f.trajectory("look", "blue")).value == 2; });
    }
    for (auto& t : threads) t.join();
    EXPECT_EQ(ok.load(), 6);
}
