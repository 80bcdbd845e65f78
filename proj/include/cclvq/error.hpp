#pragma once

#include <stdexcept>
#include <string>

namespace cclvq {

enum class ErrorCode {
    dimension_mismatch,
    empty_input,
    invalid_argument,
    invalid_measure,
    tie_detected,
    unknown_label,
    size_cap_exceeded,
    io_failure,
};

inline const char* to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::invalid_measure: return "invalid_measure";
    case ErrorCode::tie_detected: return "tie_detected";
    case ErrorCode::unknown_label: return "unknown_label";
    case ErrorCode::size_cap_exceeded: return "size_cap_exceeded";
    case ErrorCode::io_failure: return "io_failure";
    }
    return "unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised when a sample violates the no-tie hypothesis required for
/// differentiability of the distortion.
class TieError : public Error {
public:
    TieError(std::size_t sample, std::size_t first, std::size_t second, const std::string& what)
        : Error(ErrorCode::tie_detected, what), sample_(sample), first_(first), second_(second) {}

    [[nodiscard]] std::size_t sample() const noexcept { return sample_; }
    [[nodiscard]] std::size_t first() const noexcept { return first_; }
    [[nodiscard]] std::size_t second() const noexcept { return second_; }

private:
    std::size_t sample_;
    std::size_t first_;
    std::size_t second_;
};

namespace detail {

inline void require(bool ok, ErrorCode code, const char* what) {
    if (!ok) throw Error(code, what);
}

inline void require(bool ok, ErrorCode code, const std::string& what) {
    if (!ok) throw Error(code, what);
}

} // namespace detail

} // namespace cclvq
