#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ccfold {

enum class ErrorCode {
    UnsupportedDimension,
    GridTooCoarse,
    ShapeError,
    ConeViolation,
    InvalidExponent,
    InvalidSeed,
    InvariantViolation,
    MaxIterations,
    ConeExit,
    SingularJacobian,
    EigenNonconvergence,
    DenominatorDegenerate,
    ProbeInconclusive,
    Stall,
    CorrectorFailure,
    NoFoldFound,
    CriteriaDisagree,
    AugmentedSingularity,
    InsufficientPoints,
    UnknownKey,
    TypeError,
    Io,
};

constexpr std::string_view to_string(ErrorCode c) noexcept
{
    switch (c) {
    case ErrorCode::UnsupportedDimension: return "unsupported-dimension";
    case ErrorCode::GridTooCoarse: return "grid-too-coarse";
    case ErrorCode::ShapeError: return "shape-error";
    case ErrorCode::ConeViolation: return "cone-violation";
    case ErrorCode::InvalidExponent: return "invalid-exponent";
    case ErrorCode::InvalidSeed: return "invalid-seed";
    case ErrorCode::InvariantViolation: return "invariant-violation";
    case ErrorCode::MaxIterations: return "max-iterations-exceeded";
    case ErrorCode::ConeExit: return "cone-exit";
    case ErrorCode::SingularJacobian: return "singular-jacobian";
    case ErrorCode::EigenNonconvergence: return "eigen-nonconvergence";
    case ErrorCode::DenominatorDegenerate: return "denominator-degenerate";
    case ErrorCode::ProbeInconclusive: return "probe-inconclusive";
    case ErrorCode::Stall: return "stall";
    case ErrorCode::CorrectorFailure: return "corrector-failure";
    case ErrorCode::NoFoldFound: return "no-fold-found";
    case ErrorCode::CriteriaDisagree: return "criteria-disagree";
    case ErrorCode::AugmentedSingularity: return "augmented-singularity";
    case ErrorCode::InsufficientPoints: return "insufficient-points";
    case ErrorCode::UnknownKey: return "unknown-key";
    case ErrorCode::TypeError: return "type-error";
    case ErrorCode::Io: return "io-error";
    }
    return "unknown";
}

/// Compact rendering of a real for messages; std::to_string prints 1e-12 as 0.000000.
inline std::string fmt_num(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
    {
    }

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

#define CCFOLD_THROW_IF(cond, code, msg)                                                   \
    do {                                                                                   \
        if (cond) throw ::ccfold::Error((code), (msg));                                    \
    } while (0)

} // namespace ccfold
