#pragma once

#include <stdexcept>
#include <string>

namespace emag {

// Every error raised by the library derives from Error so callers can catch
// the family; the subclasses mirror the failure modes the modules document.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class ProjectionError : public Error {
 public:
  using Error::Error;
};

class NormalizationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

class TrainingAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace emag
