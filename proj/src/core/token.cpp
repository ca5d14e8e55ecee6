#include "rcdpo/core/token.hpp"

#include <array>
#include <cctype>

#include "rcdpo/errors.hpp"

namespace rcdpo {

namespace {

constexpr std::array<std::string_view, markers::kNumReserved> kMarkerText = {
    markers::kThinkOpenText, markers::kThinkCloseText, markers::kAnswerOpenText,
    markers::kAnswerCloseText, markers::kStepEndText, markers::kStepHeaderText,
};

bool is_reserved_word(std::string_view w) {
    for (auto m : kMarkerText) {
        if (w == m) return true;
    }
    return w == "Step";
}

void check_word(const std::string& w) {
    if (w.empty()) throw std::invalid_argument("vocabulary word must be non-empty");
    for (char c : w) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            throw std::invalid_argument("vocabulary word contains whitespace: '" + w + "'");
        }
    }
    if (is_reserved_word(w)) {
        throw std::invalid_argument("vocabulary word collides with a structural marker: '" + w + "'");
    }
}

}  // namespace

Vocabulary::Vocabulary(const std::vector<std::string>& image_words,
                       const std::vector<std::string>& text_words) {
    for (auto m : kMarkerText) words_.emplace_back(m);
    for (const auto& w : image_words) {
        check_word(w);
        words_.push_back(w);
    }
    text_begin_ = static_cast<std::uint32_t>(words_.size());
    for (const auto& w : text_words) {
        check_word(w);
        words_.push_back(w);
    }
    for (std::uint32_t i = 0; i < words_.size(); ++i) {
        if (!index_.emplace(words_[i], i).second) {
            throw std::invalid_argument("duplicate vocabulary word: '" + words_[i] + "'");
        }
    }
}

bool Vocabulary::is_continuation(Token t) const {
    return is_text(t) && words_[t.id].size() > 2 && words_[t.id].starts_with("##");
}

const std::string& Vocabulary::word(Token t) const {
    if (t.id >= size()) throw UnknownToken("token id " + std::to_string(t.id) + " >= vocabulary size");
    return words_[t.id];
}

std::optional<Token> Vocabulary::lookup(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return Token{it->second};
}

Token Vocabulary::at(std::string_view word) const {
    auto t = lookup(word);
    if (!t) throw UnknownToken("unknown word '" + std::string(word) + "'");
    return *t;
}

TokenSeq Vocabulary::encode(std::string_view text) const {
    TokenSeq out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.push_back(at(text.substr(i, j - i)));
        i = j;
    }
    return out;
}

std::string Vocabulary::decode(std::span<const Token> tokens) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += word(tokens[i]);
    }
    return out;
}

}  // namespace rcdpo
