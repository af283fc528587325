#include "guiharness/error.hpp"

namespace guiharness {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidAction: return "InvalidAction";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IllegalKindForPlatform: return "IllegalKindForPlatform";
    case ErrorCode::MissingCoordinate: return "MissingCoordinate";
    case ErrorCode::MalformedValue: return "MalformedValue";
    case ErrorCode::MissingUrl: return "MissingUrl";
    case ErrorCode::MissingHint: return "MissingHint";
    case ErrorCode::UnknownTemplate: return "UnknownTemplate";
    case ErrorCode::NoActionBlock: return "NoActionBlock";
    case ErrorCode::BadActionKind: return "BadActionKind";
    case ErrorCode::EndpointUnavailable: return "EndpointUnavailable";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::EnvironmentFault: return "EnvironmentFault";
    case ErrorCode::MissingProbability: return "MissingProbability";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::SpecError: return "SpecError";
    case ErrorCode::SearchBudgetExceeded: return "SearchBudgetExceeded";
    case ErrorCode::EmptyHistory: return "EmptyHistory";
    case ErrorCode::AdapterSchemaError: return "AdapterSchemaError";
    case ErrorCode::UnknownAdapter: return "UnknownAdapter";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::UnknownTask: return "UnknownTask";
    case ErrorCode::SessionGone: return "SessionGone";
    case ErrorCode::NotSealed: return "NotSealed";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace guiharness
