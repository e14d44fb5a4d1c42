#pragma once

#include <stdexcept>
#include <string>

namespace stagecraft {

// Root of every exception the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Script documents ----------------------------------------------------------

class SyntaxError : public Error {
 public:
  SyntaxError(const std::string& what, std::size_t line, std::size_t column)
      : Error(what + " (line " + std::to_string(line) + ", column " + std::to_string(column) + ")"),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class UnknownPlot : public Error {
 public:
  explicit UnknownPlot(const std::string& id) : Error("unknown plot id '" + id + "'"), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class AmbiguousDiff : public Error {
 public:
  using Error::Error;
};

// LLM traffic ---------------------------------------------------------------

class ProviderUnavailable : public Error {
 public:
  using Error::Error;
};

class AuthError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class MissingSection : public Error {
 public:
  explicit MissingSection(const std::string& tag, const std::string& context = {})
      : Error("missing section '### " + tag + "'" + (context.empty() ? "" : " in " + context)), tag_(tag) {}
  const std::string& tag() const noexcept { return tag_; }

 private:
  std::string tag_;
};

class MalformedDecision : public Error {
 public:
  using Error::Error;
};

// Generation ----------------------------------------------------------------

class UnparsableBallot : public Error {
 public:
  using Error::Error;
};

class SegmentationError : public Error {
 public:
  using Error::Error;
};

// Misuse of an operation outside its declared precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Runtime -------------------------------------------------------------------

// A turn that could not be completed; the session is left as it was.
class TurnFailed : public Error {
 public:
  explicit TurnFailed(const std::string& what, bool provider_failure = false)
      : Error(what), provider_failure_(provider_failure) {}
  // True when the provider was unreachable rather than non-compliant.
  bool provider_failure() const noexcept { return provider_failure_; }

 private:
  bool provider_failure_;
};

class SessionFinished : public Error {
 public:
  using Error::Error;
};

// Service ---------------------------------------------------------------------

// A script, session or job id that names nothing.
class NotFound : public Error {
 public:
  using Error::Error;
};

}  // namespace stagecraft
