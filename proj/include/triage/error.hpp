#pragma once

#include <stdexcept>
#include <string>

namespace triage {

enum class ErrorCode {
    UnreadableFile,
    MissingSpacing,
    NonVolumetric,
    IOFailure,
    InvalidArgument,
    DegenerateOutput,
    EmptyMask,
    ShapeMismatch,
    InvalidSpec,
    EmptyInput,
    VersionMismatch,
    KeyMismatch,
    NoTargets,
    Divergence,
    InfeasibleSpec,
    DegenerateSample,
    ConstantVector,
    Misalignment,
    OutOfRange,
    NotScored,
    UnknownStudy,
    SliceOutOfRange,
};

const char* to_string(ErrorCode code);

// All recoverable failures in the library are reported through this type;
// callers switch on code() rather than on the message text.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Soft conditions (empty lung mask, degenerate split, ...) go to stderr
// and are also reported in the returned structures.
void warn(const std::string& message);
void set_warnings_enabled(bool enabled);

} // namespace triage
