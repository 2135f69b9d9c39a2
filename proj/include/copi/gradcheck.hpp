#pragma once

#include <functional>

#include "copi/optim.hpp"
#include "copi/rng.hpp"
#include "copi/tensor.hpp"

namespace copi {

/// Builds a scalar loss from the current parameter values. The tape is
/// fresh per call; with tape.recording=false the function must still
/// produce the same value (pure forward).
using LossFn = std::function<TensorPtr(Tape&)>;

struct GradCheckOptions {
    double eps = 1e-4;
    /// Coordinates checked per parameter tensor; <=0 means every one.
    int samples_per_param = 0;
    uint64_t seed = 0;
};

/// Central-difference audit of reverse-mode gradients.
///
/// Runs one recorded forward/backward for the analytic gradients, then for
/// each checked coordinate evaluates fn at theta +/- eps with recording
/// off. Returns max over checked coordinates of
///   |analytic - numeric| / max(1, |analytic|, |numeric|).
/// Throws if fn produces a non-finite value or eps is out of (0, 1e-2].
double finite_difference_gradcheck(ParameterStore& params, const LossFn& fn,
                                   const GradCheckOptions& opts = {});

}  // namespace copi
