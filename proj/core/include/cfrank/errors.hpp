#pragma once

#include <stdexcept>
#include <string>

namespace cfrank {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CFRANK_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  };

CFRANK_DEFINE_ERROR(DegenerateMatrix)
CFRANK_DEFINE_ERROR(OracleSizeExceeded)
CFRANK_DEFINE_ERROR(ConfigError)
CFRANK_DEFINE_ERROR(IoError)
CFRANK_DEFINE_ERROR(SplitError)
CFRANK_DEFINE_ERROR(IndexError)
CFRANK_DEFINE_ERROR(DegenerateBatch)
CFRANK_DEFINE_ERROR(UndefinedAngle)
CFRANK_DEFINE_ERROR(NumericError)
CFRANK_DEFINE_ERROR(EvalError)

#undef CFRANK_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace cfrank
