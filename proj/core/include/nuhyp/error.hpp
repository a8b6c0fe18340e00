#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nuhyp {

enum class Errc {
    DimensionMismatch,
    SpaceMismatch,
    InversionFailure,
    OutOfWindow,
    SingularRestriction,
    SettleExceedsOrbit,
    SplittingNotConverged,
    DegenerateSplitting,
    ZeroVector,
    EmptySequence,
    LengthMismatch,
    PreconditionViolated,
    InvalidArgument,
    BudgetExceeded,
    ConeViolation,
    FoldOver,
    CutFailure,
    NoHyperbolicTimes,
    CertificateFailure,
    CalibrationFailure,
    OrderingViolated,
    ConfigError,
    IoError,
};

std::string_view to_string(Errc code);

/// Library-wide exception. `code()` identifies the failure class; the
/// message carries the offending values (index, threshold, ...).
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace nuhyp
