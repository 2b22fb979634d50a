#pragma once

#include <stdexcept>

namespace matdiff {

// Thrown when a training loop hits a non-finite loss; the CLI maps this to
// its numerical-abort exit code.
struct NumericalAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace matdiff
