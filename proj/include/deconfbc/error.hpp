#pragma once

#include <stdexcept>
#include <string>

namespace deconfbc {

enum class ErrorCode {
    ConfigPath,
    ConfigInvalid,
    SeriesTooShort,
    MisalignedSources,
    BadFractions,
    MissingValue,
    UnstableConfig,
    IoFailure,
    DegenerateMean,
    DegenerateStd,
    DegenerateQuantile,
    NonFiniteLoss,
    LengthMismatch,
    ShapeMismatch,
    LatentMissing,
    EmptyInput,
    RankDeficient,
    DegenerateColumn,
    InvalidArgument,
};

/// Machine-parsable upper-case name, e.g. "CONFIG_PATH".
const char* code_name(ErrorCode code);

/// Process exit status for a code: 2 config, 3 data, 4 numeric.
int exit_status(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace deconfbc
