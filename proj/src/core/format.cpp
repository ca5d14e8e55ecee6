#include "rcdpo/core/format.hpp"

#include <cctype>
#include <vector>

#include "rcdpo/errors.hpp"

namespace rcdpo {

namespace {

class LineWriter {
public:
    void append_word(std::string_view w) {
        if (!current_.empty()) current_ += ' ';
        current_ += w;
    }
    void start_line(std::string text) {
        flush();
        current_ = std::move(text);
    }
    void whole_line(std::string_view text) {
        flush();
        lines_.emplace_back(text);
    }
    void flush() {
        if (!current_.empty()) lines_.push_back(std::move(current_));
        current_.clear();
    }
    std::string finish() {
        flush();
        std::string out;
        for (std::size_t i = 0; i < lines_.size(); ++i) {
            if (i) out += '\n';
            out += lines_[i];
        }
        return out;
    }

private:
    std::vector<std::string> lines_;
    std::string current_;
};

struct Word {
    std::string_view text;
    std::size_t pos;
};

std::vector<Word> split_words(std::string_view text) {
    std::vector<Word> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.push_back({text.substr(i, j - i), i});
        i = j;
    }
    return out;
}

bool is_step_number(std::string_view w) {
    if (w.size() < 2 || w.back() != ':') return false;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(w[i]))) return false;
    }
    return true;
}

}  // namespace

std::string render_tokens(std::span<const Token> tokens, const Vocabulary& vocab) {
    LineWriter out;
    std::size_t step_no = 0;
    for (const Token t : tokens) {
        if (t == markers::kThinkOpen) {
            out.whole_line(markers::kThinkOpenText);
        } else if (t == markers::kThinkClose) {
            out.whole_line(markers::kThinkCloseText);
        } else if (t == markers::kAnswerOpen) {
            out.whole_line(markers::kAnswerOpenText);
        } else if (t == markers::kAnswerClose) {
            out.whole_line(markers::kAnswerCloseText);
        } else if (t == markers::kStepHeader) {
            out.start_line("### Step " + std::to_string(++step_no) + ":");
        } else if (t == markers::kStepEnd) {
            out.append_word(markers::kStepEndText);
            out.flush();
        } else {
            out.append_word(vocab.word(t));
        }
    }
    return out.finish();
}

std::string render_trajectory(const Trajectory& trajectory, const Vocabulary& vocab) {
    if (trajectory.answer_tokens.empty()) throw IncompleteTrajectory("answer is empty");
    if (trajectory.steps.empty()) throw IncompleteTrajectory("trajectory has no reasoning steps");
    for (std::size_t i = 0; i < trajectory.steps.size(); ++i) {
        const auto& s = trajectory.steps[i];
        if (!s.terminated) throw IncompleteTrajectory("step " + std::to_string(i + 1) + " is unterminated");
        if (s.tokens.empty()) throw IncompleteTrajectory("step " + std::to_string(i + 1) + " is empty");
        for (auto t : s.tokens) {
            if (markers::is_structural(t)) {
                throw IncompleteTrajectory("structural token inside step " + std::to_string(i + 1));
            }
        }
    }
    for (auto t : trajectory.answer_tokens) {
        if (markers::is_structural(t)) throw IncompleteTrajectory("structural token inside answer");
    }
    return render_tokens(trajectory.response_tokens(), vocab);
}

Trajectory parse_response(std::string_view text, const Vocabulary& vocab) {
    enum class State { kBefore, kThink, kBetween, kAnswer, kDone };
    const auto words = split_words(text);
    Trajectory out;
    State state = State::kBefore;
    ReasoningStep current;
    bool open_step = false;

    auto close_step = [&](bool terminated, std::size_t pos) {
        if (current.tokens.empty()) throw MalformedResponse("empty reasoning step", pos);
        current.terminated = terminated;
        out.steps.push_back(std::move(current));
        current = ReasoningStep{};
        open_step = false;
    };

    for (std::size_t i = 0; i < words.size(); ++i) {
        const auto [w, pos] = words[i];
        switch (state) {
            case State::kBefore:
                if (w != markers::kThinkOpenText) throw MalformedResponse("expected <think>", pos);
                state = State::kThink;
                break;
            case State::kThink:
                if (w == markers::kThinkCloseText) {
                    if (open_step) close_step(false, pos);
                    state = State::kBetween;
                } else if (w == markers::kThinkOpenText) {
                    throw MalformedResponse("nested <think>", pos);
                } else if (w == markers::kAnswerOpenText || w == markers::kAnswerCloseText) {
                    throw MalformedResponse("missing </think> before answer tags", pos);
                } else if (w == markers::kStepHeaderText) {
                    if (i + 2 >= words.size() || words[i + 1].text != "Step" ||
                        !is_step_number(words[i + 2].text)) {
                        throw MalformedResponse("malformed step header", pos);
                    }
                    if (open_step) close_step(false, pos);
                    open_step = true;
                    i += 2;
                } else if (w == markers::kStepEndText) {
                    if (!open_step || current.tokens.empty()) {
                        throw MalformedResponse("<END> closes an empty step", pos);
                    }
                    close_step(true, pos);
                } else {
                    auto t = vocab.lookup(w);
                    if (!t) throw MalformedResponse("unknown word '" + std::string(w) + "'", pos);
                    current.tokens.push_back(*t);
                    open_step = true;
                }
                break;
            case State::kBetween:
                if (w != markers::kAnswerOpenText) throw MalformedResponse("expected <answer>", pos);
                state = State::kAnswer;
                break;
            case State::kAnswer:
                if (w == markers::kAnswerCloseText) {
                    state = State::kDone;
                } else if (w == markers::kAnswerOpenText) {
                    throw MalformedResponse("nested <answer>", pos);
                } else if (w == markers::kThinkOpenText || w == markers::kThinkCloseText ||
                           w == markers::kStepEndText || w == markers::kStepHeaderText) {
                    throw MalformedResponse("structural tag inside <answer>", pos);
                } else {
                    auto t = vocab.lookup(w);
                    if (!t) throw MalformedResponse("unknown word '" + std::string(w) + "'", pos);
                    out.answer_tokens.push_back(*t);
                }
                break;
            case State::kDone:
                throw MalformedResponse("content after </answer>", pos);
        }
    }
    switch (state) {
        case State::kBefore: throw MalformedResponse("missing <think>", text.size());
        case State::kThink: throw MalformedResponse("missing </think>", text.size());
        case State::kBetween: throw MalformedResponse("missing <answer>", text.size());
        case State::kAnswer: throw MalformedResponse("missing </answer>", text.size());
        case State::kDone: break;
    }
    return out;
}

}  // namespace rcdpo
