#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nicreg {

enum class ErrorKind {
  kInvalidArgument,
  kInvariantViolation,
  kResourceLimit,
  kTrainingDiverged,
  kModelDiverged,
  kNoFeasibleCodec,
  kNoOverlap,
  kIo,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Single exception type for the library; callers switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::kInvalidArgument, what);
}

}  // namespace nicreg
