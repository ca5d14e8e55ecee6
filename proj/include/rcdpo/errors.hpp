#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rcdpo {

/// Base class of every error raised by the library. `kind()` is a stable
/// machine-readable name used by the CLI error document.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define RCDPO_DEFINE_ERROR(Name)                                                   \
    class Name : public Error {                                                    \
    public:                                                                        \
        explicit Name(const std::string& message) : Error(#Name, message) {}       \
    }

RCDPO_DEFINE_ERROR(IncompleteTrajectory);
RCDPO_DEFINE_ERROR(UnknownToken);
RCDPO_DEFINE_ERROR(Unsupported);
RCDPO_DEFINE_ERROR(FrozenModel);
RCDPO_DEFINE_ERROR(SameCondition);
RCDPO_DEFINE_ERROR(NoChildren);
RCDPO_DEFINE_ERROR(ExpansionExhausted);
RCDPO_DEFINE_ERROR(RolloutOverflow);
RCDPO_DEFINE_ERROR(IndexOutOfRange);
RCDPO_DEFINE_ERROR(UncoveredToken);
RCDPO_DEFINE_ERROR(RemoteUnavailable);
RCDPO_DEFINE_ERROR(MalformedJudgeReply);
RCDPO_DEFINE_ERROR(EmptyMentionSet);
RCDPO_DEFINE_ERROR(DivergenceDetected);
RCDPO_DEFINE_ERROR(ConfigInvalid);
RCDPO_DEFINE_ERROR(CheckpointError);

#undef RCDPO_DEFINE_ERROR

/// Structured-text parse failure; `position()` is a byte offset into the input.
class MalformedResponse : public Error {
public:
    MalformedResponse(const std::string& message, std::size_t position)
        : Error("MalformedResponse", message + " (at byte " + std::to_string(position) + ")"),
          position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

/// A dataset line failed to load or violated a record invariant.
class DatasetError : public Error {
public:
    DatasetError(const std::string& message, std::size_t line)
        : Error("DatasetError", "line " + std::to_string(line) + ": " + message), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A pipeline stage failed; wraps the underlying cause.
class StageFailed : public Error {
public:
    StageFailed(std::string stage, const std::string& cause)
        : Error("StageFailed", stage + ": " + cause), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace rcdpo
