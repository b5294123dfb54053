#pragma once

#include <stdexcept>
#include <string>

namespace ssbver {

// Error categories double as CLI exit codes.
enum class ErrorKind : int { config = 2, io = 3, data = 4, numeric = 5 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

#define SSBVER_DECLARE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what)                                 \
        : Error(ErrorKind::Kind, std::string(#Name ": ") + what) {}        \
  }

SSBVER_DECLARE_ERROR(ConfigError, config);
SSBVER_DECLARE_ERROR(RangeError, config);
SSBVER_DECLARE_ERROR(IoError, io);
SSBVER_DECLARE_ERROR(MissingFileError, io);
SSBVER_DECLARE_ERROR(ParseError, data);
SSBVER_DECLARE_ERROR(SplitError, data);
SSBVER_DECLARE_ERROR(DataError, data);
SSBVER_DECLARE_ERROR(BatchLayoutError, data);
SSBVER_DECLARE_ERROR(IdentityCountError, data);
SSBVER_DECLARE_ERROR(MiningError, data);
SSBVER_DECLARE_ERROR(NoMatchError, data);
SSBVER_DECLARE_ERROR(DegenerateError, data);
SSBVER_DECLARE_ERROR(DegenerateBatchError, data);
SSBVER_DECLARE_ERROR(EmptyPairError, data);
SSBVER_DECLARE_ERROR(ShapeMismatchError, numeric);
SSBVER_DECLARE_ERROR(NonFiniteLossError, numeric);

#undef SSBVER_DECLARE_ERROR

}  // namespace ssbver
