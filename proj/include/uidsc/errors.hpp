#pragma once

#include <stdexcept>
#include <string>

namespace uidsc {

/// Process exit codes used by the command-line front end.
enum class ExitCode : int {
    Ok = 0,
    Failure = 1,
    Usage = 2,
    Data = 3,
    Service = 4,
    Numeric = 5,
};

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, ExitCode code = ExitCode::Failure)
        : std::runtime_error(what), code_(code) {}

    ExitCode exit_code() const noexcept { return code_; }

private:
    ExitCode code_;
};

#define UIDSC_DEFINE_ERROR(Name, Code)                                  \
    class Name : public Error {                                         \
    public:                                                             \
        explicit Name(const std::string& what) : Error(what, Code) {}  \
    }

UIDSC_DEFINE_ERROR(ShapeError, ExitCode::Data);
UIDSC_DEFINE_ERROR(LengthError, ExitCode::Data);
UIDSC_DEFINE_ERROR(ConfigError, ExitCode::Usage);
UIDSC_DEFINE_ERROR(DomainError, ExitCode::Data);
UIDSC_DEFINE_ERROR(DataError, ExitCode::Data);
UIDSC_DEFINE_ERROR(CheckpointError, ExitCode::Data);
UIDSC_DEFINE_ERROR(IntentResolutionError, ExitCode::Data);
UIDSC_DEFINE_ERROR(ServiceError, ExitCode::Service);
UIDSC_DEFINE_ERROR(MetricUnavailable, ExitCode::Data);
UIDSC_DEFINE_ERROR(NumericError, ExitCode::Numeric);
// An encoder that emits an all-zero latent is untrained or has collapsed.
UIDSC_DEFINE_ERROR(DegenerateSignalError, ExitCode::Numeric);
UIDSC_DEFINE_ERROR(DeepFadeError, ExitCode::Numeric);

#undef UIDSC_DEFINE_ERROR

}  // namespace uidsc
