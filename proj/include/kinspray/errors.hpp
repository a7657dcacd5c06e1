#pragma once

#include <stdexcept>
#include <string>

namespace kinspray {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define KINSPRAY_ERROR_TYPE(NAME)             \
  struct NAME : Error {                       \
    explicit NAME(const std::string& what_arg)\
        : Error(std::string(#NAME ": ") + what_arg) {} \
  }

KINSPRAY_ERROR_TYPE(NonStochasticMatrix);
KINSPRAY_ERROR_TYPE(ReducibleChain);
KINSPRAY_ERROR_TYPE(NonFiniteTime);
KINSPRAY_ERROR_TYPE(NotCentered);
KINSPRAY_ERROR_TYPE(SingularBeyondKernel);
KINSPRAY_ERROR_TYPE(NoSpectralGap);
KINSPRAY_ERROR_TYPE(GridMismatch);
KINSPRAY_ERROR_TYPE(IndefiniteKernel);
KINSPRAY_ERROR_TYPE(ConsistencyFailure);
KINSPRAY_ERROR_TYPE(JumpStraddled);
KINSPRAY_ERROR_TYPE(CFLViolation);
KINSPRAY_ERROR_TYPE(ResolutionInsufficient);
KINSPRAY_ERROR_TYPE(StabilityViolation);
KINSPRAY_ERROR_TYPE(NonFiniteState);
KINSPRAY_ERROR_TYPE(NoConvergence);
KINSPRAY_ERROR_TYPE(InsufficientEnsemble);
KINSPRAY_ERROR_TYPE(ObservableMismatch);
KINSPRAY_ERROR_TYPE(ConfigError);

#undef KINSPRAY_ERROR_TYPE

}  // namespace kinspray
