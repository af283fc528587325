#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace guiharness {

enum class ErrorCode {
  InvalidAction,
  ParseError,
  IllegalKindForPlatform,
  MissingCoordinate,
  MalformedValue,
  MissingUrl,
  MissingHint,
  UnknownTemplate,
  NoActionBlock,
  BadActionKind,
  EndpointUnavailable,
  MalformedResponse,
  EnvironmentFault,
  MissingProbability,
  SchemaVersionMismatch,
  SpecError,
  SearchBudgetExceeded,
  EmptyHistory,
  AdapterSchemaError,
  UnknownAdapter,
  InsufficientData,
  InvalidSpec,
  UnknownTask,
  SessionGone,
  NotSealed,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Base exception for everything the library throws on a contract violation.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Text that failed to parse; `offset` is the byte position in the input.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, std::string expected)
      : Error(ErrorCode::ParseError,
              "at byte " + std::to_string(offset) + ": expected " + expected),
        offset_(offset),
        expected_(std::move(expected)) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& expected() const noexcept { return expected_; }

 private:
  std::size_t offset_;
  std::string expected_;
};

}  // namespace guiharness
