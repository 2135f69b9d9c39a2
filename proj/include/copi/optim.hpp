#pragma once

#include <string>
#include <vector>

#include "copi/rng.hpp"
#include "copi/tensor.hpp"

namespace copi {

/// Named trainable tensors in a fixed registration order. Iteration order
/// is deterministic, which the optimizer, checkpoints and gradient checks
/// all rely on.
class ParameterStore {
public:
    TensorPtr add(const std::string& name, std::vector<int> shape);
    TensorPtr get(const std::string& name) const;
    bool has(const std::string& name) const;

    const std::vector<std::pair<std::string, TensorPtr>>& entries() const { return entries_; }
    size_t count() const { return entries_.size(); }
    int64_t scalar_count() const;

    void zero_grads();
    /// Deep copy of all values, in registration order.
    std::vector<std::vector<double>> snapshot_values() const;
    void restore_values(const std::vector<std::vector<double>>& snap);
    /// Same names/shapes, freshly copied values; grads zeroed.
    ParameterStore clone() const;

    /// Glorot-style uniform init for rank-2 tensors, zeros for vectors.
    void init_uniform(Rng& rng);

private:
    std::vector<std::pair<std::string, TensorPtr>> entries_;
};

/// ADAM with bias correction. Moment buffers live here, keyed by the
/// store's registration order.
class AdamState {
public:
    AdamState(const ParameterStore& params, double lr = 1e-3, double beta1 = 0.9,
              double beta2 = 0.999, double eps = 1e-8);

    /// One update from the accumulated grads; grads are zeroed afterward.
    /// Throws on a non-finite gradient, naming the parameter.
    void step(ParameterStore& params);

    int64_t steps_taken() const { return step_; }
    double learning_rate() const { return lr_; }

private:
    std::vector<std::vector<double>> m_, v_;
    int64_t step_ = 0;
    double lr_, beta1_, beta2_, eps_;
};

}  // namespace copi
