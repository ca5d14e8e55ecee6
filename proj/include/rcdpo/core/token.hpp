#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rcdpo {

struct Token {
    std::uint32_t id = 0;

    constexpr auto operator<=>(const Token&) const = default;
};

using TokenSeq = std::vector<Token>;

// Reserved ids for the structural markers. Every vocabulary starts with these.
namespace markers {
inline constexpr Token kThinkOpen{0};
inline constexpr Token kThinkClose{1};
inline constexpr Token kAnswerOpen{2};
inline constexpr Token kAnswerClose{3};
inline constexpr Token kStepEnd{4};
inline constexpr Token kStepHeader{5};
inline constexpr std::uint32_t kNumReserved = 6;

inline constexpr std::string_view kThinkOpenText = "<think>";
inline constexpr std::string_view kThinkCloseText = "</think>";
inline constexpr std::string_view kAnswerOpenText = "<answer>";
inline constexpr std::string_view kAnswerCloseText = "</answer>";
inline constexpr std::string_view kStepEndText = "<END>";
inline constexpr std::string_view kStepHeaderText = "###";

constexpr bool is_structural(Token t) noexcept { return t.id < kNumReserved; }
}  // namespace markers

/// Word-level vocabulary with the fixed layout
///   [structural markers][image tokens][text tokens].
/// Image tokens are abstract stand-ins for visual patches; text tokens are the
/// words a policy may emit. A text word starting with "##" continues the
/// previous word (subword piece).
class Vocabulary {
public:
    Vocabulary(const std::vector<std::string>& image_words,
               const std::vector<std::string>& text_words);

    std::uint32_t size() const noexcept { return static_cast<std::uint32_t>(words_.size()); }
    std::uint32_t image_begin() const noexcept { return markers::kNumReserved; }
    std::uint32_t image_end() const noexcept { return text_begin_; }
    std::uint32_t text_begin() const noexcept { return text_begin_; }

    bool is_image(Token t) const noexcept { return t.id >= image_begin() && t.id < image_end(); }
    bool is_text(Token t) const noexcept { return t.id >= text_begin_ && t.id < size(); }
    bool is_continuation(Token t) const;

    const std::string& word(Token t) const;
    std::optional<Token> lookup(std::string_view word) const;
    Token at(std::string_view word) const;

    /// Whitespace-separated words to tokens; throws UnknownToken on misses.
    TokenSeq encode(std::string_view text) const;
    std::string decode(std::span<const Token> tokens) const;

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::uint32_t> index_;
    std::uint32_t text_begin_ = markers::kNumReserved;
};

}  // namespace rcdpo
