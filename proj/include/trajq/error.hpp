#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace trajq {

enum class ErrorKind {
  kInvalidArgument,
  kConfig,
  kParse,
  kIo,
  kCapacity,
  kNotFound,
  kNumeric,
};

/// Library-wide exception. `kind` lets the service layer map failures onto
/// HTTP statuses without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Validation failure tied to a field of a structured input, e.g.
/// "objects[0].segments[1].points".
class FieldError : public Error {
 public:
  FieldError(std::string field_path, const std::string& message)
      : Error(ErrorKind::kInvalidArgument, field_path + ": " + message),
        field_path_(std::move(field_path)),
        message_(message) {}
  const std::string& field_path() const noexcept { return field_path_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string field_path_;
  std::string message_;
};

}  // namespace trajq
