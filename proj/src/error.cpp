#include "byteveil/error.hpp"

namespace byteveil {

std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::MalformedDosHeader: return "MalformedDosHeader";
    case ErrorCode::MalformedPeHeader: return "MalformedPeHeader";
    case ErrorCode::TruncatedSectionTable: return "TruncatedSectionTable";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::StaleTrace: return "StaleTrace";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptTensor: return "CorruptTensor";
    case ErrorCode::NoBudget: return "NoBudget";
    case ErrorCode::NoBytes: return "NoBytes";
    case ErrorCode::EmptyManifest: return "EmptyManifest";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

} // namespace byteveil
