#pragma once

#include <stdexcept>
#include <string>

namespace slicereg
{

enum class ErrorCode
{
    InvalidArgument,
    DimensionMismatch,
    Degenerate,
    Io,
    Format,
    Config,
    BadMagic,
    Truncated,
    ChannelMismatch,
    BadStride,
    BadOutputChannels,
    MalformedWeights,
    Convergence,
    Fiducial,
};

inline const char* to_string(ErrorCode code)
{
    switch (code)
    {
        case ErrorCode::InvalidArgument: return "invalid argument";
        case ErrorCode::DimensionMismatch: return "dimension mismatch";
        case ErrorCode::Degenerate: return "degenerate input";
        case ErrorCode::Io: return "i/o error";
        case ErrorCode::Format: return "format error";
        case ErrorCode::Config: return "configuration error";
        case ErrorCode::BadMagic: return "bad magic";
        case ErrorCode::Truncated: return "truncated";
        case ErrorCode::ChannelMismatch: return "channel mismatch";
        case ErrorCode::BadStride: return "bad stride";
        case ErrorCode::BadOutputChannels: return "bad output channels";
        case ErrorCode::MalformedWeights: return "malformed weights";
        case ErrorCode::Convergence: return "convergence failure";
        case ErrorCode::Fiducial: return "fiducial error";
    }
    return "unknown";
}

class Error : public std::runtime_error
{
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message)
        , m_code(code)
    {
    }

    ErrorCode code() const noexcept { return m_code; }

private:
    ErrorCode m_code;
};

// CLI exit codes: 0 ok, 2 I/O, 3 config, 4 weights, 5 convergence/degenerate.
inline int exit_code(ErrorCode code)
{
    switch (code)
    {
        case ErrorCode::Io:
        case ErrorCode::Format:
        case ErrorCode::Fiducial:
        case ErrorCode::DimensionMismatch:
            return 2;
        case ErrorCode::Config:
        case ErrorCode::InvalidArgument:
            return 3;
        case ErrorCode::BadMagic:
        case ErrorCode::Truncated:
        case ErrorCode::ChannelMismatch:
        case ErrorCode::BadStride:
        case ErrorCode::BadOutputChannels:
        case ErrorCode::MalformedWeights:
            return 4;
        case ErrorCode::Degenerate:
        case ErrorCode::Convergence:
            return 5;
    }
    return 1;
}

inline void require(bool condition, ErrorCode code, const std::string& message)
{
    if (!condition)
        throw Error(code, message);
}

} // namespace slicereg
