#ifndef NBP_ERROR_HPP
#define NBP_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace nbp {

enum class ErrorCode {
    ParseError,
    InvalidArgument,
    DuplicateId,
    UnknownVariable,
    DisconnectedGraph,
    DuplicateMembership,
    EmptyFactor,
    BadCardinality,
    NonPositivePotential,
    SizeMismatch,
    NotGradientInput,
    IncompatibleC1,
    StateSpaceTooLarge,
    IncompatibleBeliefs,
    NonPositiveBeliefs,
    NumericalOverflow,
    NonPositiveMessage,
    NotEquivalent,
    NotAFixedPoint,
    NoPlainFixedPoint,
    SingleCycleUndefined,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::DuplicateId: return "DuplicateId";
        case ErrorCode::UnknownVariable: return "UnknownVariable";
        case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
        case ErrorCode::DuplicateMembership: return "DuplicateMembership";
        case ErrorCode::EmptyFactor: return "EmptyFactor";
        case ErrorCode::BadCardinality: return "BadCardinality";
        case ErrorCode::NonPositivePotential: return "NonPositivePotential";
        case ErrorCode::SizeMismatch: return "SizeMismatch";
        case ErrorCode::NotGradientInput: return "NotGradientInput";
        case ErrorCode::IncompatibleC1: return "IncompatibleC1";
        case ErrorCode::StateSpaceTooLarge: return "StateSpaceTooLarge";
        case ErrorCode::IncompatibleBeliefs: return "IncompatibleBeliefs";
        case ErrorCode::NonPositiveBeliefs: return "NonPositiveBeliefs";
        case ErrorCode::NumericalOverflow: return "NumericalOverflow";
        case ErrorCode::NonPositiveMessage: return "NonPositiveMessage";
        case ErrorCode::NotEquivalent: return "NotEquivalent";
        case ErrorCode::NotAFixedPoint: return "NotAFixedPoint";
        case ErrorCode::NoPlainFixedPoint: return "NoPlainFixedPoint";
        case ErrorCode::SingleCycleUndefined: return "SingleCycleUndefined";
    }
    return "Unknown";
}

// Every failure raised by the library carries one of the codes above so that
// callers (the CLI in particular) can map them onto exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail),
          code_(code), detail_(detail) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

}  // namespace nbp

#endif  // NBP_ERROR_HPP
