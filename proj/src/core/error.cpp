#include "core/error.hpp"

namespace handover {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::Config: return "config";
    case ErrorCode::Solver: return "solver";
    case ErrorCode::State: return "state";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::NotFound: return "not-found";
    case ErrorCode::DivergedRollout: return "diverged-rollout";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

}  // namespace handover
