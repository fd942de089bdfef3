#include "triage/error.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace triage {

const char* to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::UnreadableFile: return "UnreadableFile";
    case ErrorCode::MissingSpacing: return "MissingSpacing";
    case ErrorCode::NonVolumetric: return "NonVolumetric";
    case ErrorCode::IOFailure: return "IOFailure";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DegenerateOutput: return "DegenerateOutput";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::KeyMismatch: return "KeyMismatch";
    case ErrorCode::NoTargets: return "NoTargets";
    case ErrorCode::Divergence: return "Divergence";
    case ErrorCode::InfeasibleSpec: return "InfeasibleSpec";
    case ErrorCode::DegenerateSample: return "DegenerateSample";
    case ErrorCode::ConstantVector: return "ConstantVector";
    case ErrorCode::Misalignment: return "Misalignment";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NotScored: return "NotScored";
    case ErrorCode::UnknownStudy: return "UnknownStudy";
    case ErrorCode::SliceOutOfRange: return "SliceOutOfRange";
    }
    return "Unknown";
}

namespace {
std::atomic<bool> warnings_enabled{true};
}

void set_warnings_enabled(bool enabled) { warnings_enabled = enabled; }

void warn(const std::string& message)
{
    if (!warnings_enabled)
        return;
    static std::mutex mutex;
    std::lock_guard lock(mutex);
    std::cerr << "[triage] warning: " << message << '\n';
}

} // namespace triage
