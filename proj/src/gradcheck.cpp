#include "copi/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace copi {

namespace {

double eval_value(const LossFn& fn) {
    Tape tape;
    tape.recording = false;
    auto loss = fn(tape);
    if (loss->size() != 1)
        throw std::invalid_argument("gradcheck: fn must produce a scalar");
    const double v = loss->values[0];
    if (!std::isfinite(v)) throw std::runtime_error("gradcheck: non-finite function value");
    return v;
}

}  // namespace

double finite_difference_gradcheck(ParameterStore& params, const LossFn& fn,
                                   const GradCheckOptions& opts) {
    if (!(opts.eps > 0.0) || opts.eps > 1e-2)
        throw std::invalid_argument("gradcheck: eps must lie in (0, 1e-2]");

    params.zero_grads();
    {
        Tape tape;
        auto loss = fn(tape);
        if (!std::isfinite(loss->values[0]))
            throw std::runtime_error("gradcheck: non-finite function value");
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.count());
    for (const auto& [name, t] : params.entries()) analytic.push_back(t->grad);
    params.zero_grads();

    Rng rng(opts.seed);
    double worst = 0.0;
    size_t k = 0;
    for (const auto& [name, t] : params.entries()) {
        Rng stream = rng.split(k);
        const int64_t n = t->size();
        std::vector<int64_t> coords;
        if (opts.samples_per_param <= 0 || opts.samples_per_param >= n) {
            coords.resize(n);
            for (int64_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            for (int i = 0; i < opts.samples_per_param; ++i)
                coords.push_back(static_cast<int64_t>(stream.below(static_cast<uint64_t>(n))));
        }
        for (int64_t c : coords) {
            const double saved = t->values[c];
            t->values[c] = saved + opts.eps;
            const double up = eval_value(fn);
            t->values[c] = saved - opts.eps;
            const double down = eval_value(fn);
            t->values[c] = saved;
            const double numeric = (up - down) / (2.0 * opts.eps);
            const double a = analytic[k][c];
            const double rel =
                std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
            worst = std::max(worst, rel);
        }
        ++k;
    }
    return worst;
}

}  // namespace copi
