#pragma once

#include <span>
#include <string>
#include <string_view>

#include "rcdpo/core/token.hpp"
#include "rcdpo/core/trajectory.hpp"

namespace rcdpo {

/// Renders a complete trajectory as
///
///     <think>
///     ### Step 1: ... <END>
///     </think>
///     <answer>
///     ...
///     </answer>
///
/// Throws IncompleteTrajectory if a step is unterminated or the answer is empty.
std::string render_trajectory(const Trajectory& trajectory, const Vocabulary& vocab);

/// Renders an arbitrary token stream with the same layout rules as
/// `render_trajectory`, without validating it. Used on raw generations.
std::string render_tokens(std::span<const Token> tokens, const Vocabulary& vocab);

/// Parses structured response text back into a trajectory. Steps are delimited
/// by `<END>` and step headers; a step without `<END>` comes back unterminated.
/// Throws MalformedResponse (byte position) on missing, out-of-order, nested
/// or unknown tags and on out-of-vocabulary words.
Trajectory parse_response(std::string_view text, const Vocabulary& vocab);

}  // namespace rcdpo
