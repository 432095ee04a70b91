#include "nicreg/errors.hpp"

namespace nicreg {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kInvariantViolation: return "invariant-violation";
    case ErrorKind::kResourceLimit: return "resource-limit";
    case ErrorKind::kTrainingDiverged: return "training-diverged";
    case ErrorKind::kModelDiverged: return "model-diverged";
    case ErrorKind::kNoFeasibleCodec: return "no-feasible-codec";
    case ErrorKind::kNoOverlap: return "no-overlap";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace nicreg
