#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace trader {

// Base for every error the library throws; callers that do not care about the
// specific failure can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingFile : public Error {
 public:
  explicit MissingFile(const std::string& path) : Error("missing file: " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class MalformedRow : public Error {
 public:
  MalformedRow(std::size_t line, const std::string& why)
      : Error("malformed row at line " + std::to_string(line) + ": " + why), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EmptySeries : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class IndexOutOfRange : public Error {
 public:
  using Error::Error;
};

class SeriesTooShort : public Error {
 public:
  using Error::Error;
};

class InvalidAction : public Error {
 public:
  using Error::Error;
};

class SteppedAfterDone : public Error {
 public:
  SteppedAfterDone() : Error("step() called on a finished episode") {}
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class TapeReuse : public Error {
 public:
  TapeReuse() : Error("gradient tape already consumed by a backward pass") {}
};

class DegenerateDistribution : public Error {
 public:
  using Error::Error;
};

class BatchTooSmall : public Error {
 public:
  using Error::Error;
};

class BufferNotFull : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

class SeriesMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace trader
