#include "deconfbc/error.hpp"

namespace deconfbc {

const char* code_name(ErrorCode code)
{
    switch (code) {
    case ErrorCode::ConfigPath: return "CONFIG_PATH";
    case ErrorCode::ConfigInvalid: return "CONFIG_INVALID";
    case ErrorCode::SeriesTooShort: return "SERIES_TOO_SHORT";
    case ErrorCode::MisalignedSources: return "MISALIGNED_SOURCES";
    case ErrorCode::BadFractions: return "BAD_FRACTIONS";
    case ErrorCode::MissingValue: return "MISSING_VALUE";
    case ErrorCode::UnstableConfig: return "UNSTABLE_CONFIG";
    case ErrorCode::IoFailure: return "IO_FAILURE";
    case ErrorCode::DegenerateMean: return "DEGENERATE_MEAN";
    case ErrorCode::DegenerateStd: return "DEGENERATE_STD";
    case ErrorCode::DegenerateQuantile: return "DEGENERATE_QUANTILE";
    case ErrorCode::NonFiniteLoss: return "NON_FINITE_LOSS";
    case ErrorCode::LengthMismatch: return "LENGTH_MISMATCH";
    case ErrorCode::ShapeMismatch: return "SHAPE_MISMATCH";
    case ErrorCode::LatentMissing: return "LATENT_MISSING";
    case ErrorCode::EmptyInput: return "EMPTY_INPUT";
    case ErrorCode::RankDeficient: return "RANK_DEFICIENT";
    case ErrorCode::DegenerateColumn: return "DEGENERATE_COLUMN";
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    }
    return "UNKNOWN";
}

int exit_status(ErrorCode code)
{
    switch (code) {
    case ErrorCode::ConfigPath:
    case ErrorCode::ConfigInvalid:
    case ErrorCode::BadFractions:
    case ErrorCode::UnstableConfig:
    case ErrorCode::InvalidArgument:
        return 2;
    case ErrorCode::SeriesTooShort:
    case ErrorCode::MisalignedSources:
    case ErrorCode::MissingValue:
    case ErrorCode::IoFailure:
    case ErrorCode::LengthMismatch:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::LatentMissing:
    case ErrorCode::EmptyInput:
        return 3;
    case ErrorCode::DegenerateMean:
    case ErrorCode::DegenerateStd:
    case ErrorCode::DegenerateQuantile:
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::RankDeficient:
    case ErrorCode::DegenerateColumn:
        return 4;
    }
    return 4;
}

}  // namespace deconfbc
