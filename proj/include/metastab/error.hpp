#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace metastab {

enum class ErrorCode {
    UnknownLabel,
    DuplicateLabel,
    DuplicateEdge,
    NonPositiveRate,
    NotIrreducible,
    NotIrreducibleAfterReflection,
    NotStationary,
    NotReversible,
    NotZeroMean,
    NotAdmissible,
    BadSets,
    BadSubset,
    BadPartition,
    BadParams,
    NonPositiveGamma,
    StartsInDelta,
    InvalidPath,
    ParseError,
    TooLarge,
    SolverFailure,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above, so
/// front ends can map it without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Resource guards and numerical failures are distinguished from input
/// errors by the CLI exit-code contract.
[[nodiscard]] constexpr bool is_resource_guard(ErrorCode code) noexcept {
    return code == ErrorCode::TooLarge;
}

[[nodiscard]] constexpr bool is_numerical_failure(ErrorCode code) noexcept {
    return code == ErrorCode::SolverFailure;
}

}  // namespace metastab
