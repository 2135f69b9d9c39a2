#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace copi {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major tensor of 64-bit floats with an optional gradient slot.
///
/// All numerics in the project run through this type; there is no float32
/// path. grad is allocated iff requires_grad and always matches values in
/// length.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;

    int64_t size() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    void set_requires_grad(bool rg) {
        requires_grad = rg;
        grad.assign(rg ? values.size() : 0, 0.0);
    }
    void zero_grad() { grad.assign(grad.size(), 0.0); }

    static TensorPtr make(std::vector<int> shape, bool requires_grad = false);
    static TensorPtr from(std::vector<int> shape, std::vector<double> values,
                          bool requires_grad = false);
    static TensorPtr scalar(double v, bool requires_grad = false);
};

std::string shape_str(const std::vector<int>& shape);

/// Records primitive operations in execution order so that replaying their
/// backward rules in reverse accumulates exact chain-rule gradients.
///
/// Gradients of intermediates are zeroed at the start of backward(); leaf
/// gradients (parameters) accumulate across calls, so per-instance losses
/// in a batch sum naturally. Set recording=false for value-only evaluation.
class Tape {
public:
    bool recording = true;

    void record(const char* name, TensorPtr output, std::function<void()> backward_rule);

    /// Reverse-mode sweep from a scalar loss. Throws if loss is not scalar.
    void backward(const TensorPtr& loss);

    size_t num_ops() const { return ops_.size(); }
    void clear();

private:
    struct Op {
        const char* name;
        TensorPtr output;
        std::function<void()> backward;
    };
    std::vector<Op> ops_;
};

// ---------------------------------------------------------------------------
// Primitives. Each one checks shape preconditions (throwing
// std::invalid_argument naming the primitive and the offending shapes),
// computes the value in 64-bit arithmetic, and records a backward rule on
// the tape when any input requires grad.
// ---------------------------------------------------------------------------

TensorPtr add(Tape& t, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape& t, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& t, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape& t, const TensorPtr& a, double c);

/// [m,k] x [k,n] -> [m,n]
TensorPtr matmul(Tape& t, const TensorPtr& a, const TensorPtr& b);

/// Broadcast a length-n vector over the rows of an [m,n] matrix.
TensorPtr add_row(Tape& t, const TensorPtr& m, const TensorPtr& v);
TensorPtr sub_row(Tape& t, const TensorPtr& m, const TensorPtr& v);

TensorPtr relu(Tape& t, const TensorPtr& a);
TensorPtr sigmoid(Tape& t, const TensorPtr& a);
TensorPtr exp(Tape& t, const TensorPtr& a);
TensorPtr log(Tape& t, const TensorPtr& a);
/// log(1 + e^x), evaluated without overflow for large |x|.
TensorPtr softplus(Tape& t, const TensorPtr& a);

TensorPtr sum_all(Tape& t, const TensorPtr& a);
TensorPtr mean_all(Tape& t, const TensorPtr& a);
/// Rank-2 only; axis 0 sums columns into [n], axis 1 sums rows into [m].
TensorPtr sum_axis(Tape& t, const TensorPtr& a, int axis);
TensorPtr mean_axis(Tape& t, const TensorPtr& a, int axis);

/// Concatenate 1-D tensors into one vector.
TensorPtr concat(Tape& t, std::span<const TensorPtr> parts);
/// Stack k same-length vectors into a [k,n] matrix.
TensorPtr stack_rows(Tape& t, std::span<const TensorPtr> rows);
/// Rows [r0, r1) of an [m,n] matrix.
TensorPtr slice_rows(Tape& t, const TensorPtr& a, int r0, int r1);
/// Single row of an [m,n] matrix as a vector.
TensorPtr row(Tape& t, const TensorPtr& a, int r);
TensorPtr reshape(Tape& t, const TensorPtr& a, std::vector<int> shape);
/// One element by flat index, as a scalar.
TensorPtr select(Tape& t, const TensorPtr& a, int64_t flat_index);

/// Softmax along the last axis (rank 1 or 2), max-shifted for stability.
TensorPtr softmax(Tape& t, const TensorPtr& a);

/// Whole-tensor normalization to mean 0 / variance 1 with eps inside the
/// variance denominator. Statistics are per call, never across instances.
TensorPtr normalize(Tape& t, const TensorPtr& a, double eps = 1e-5);

/// Row-wise normalization of an [m,n] matrix: each row gets mean 0 /
/// variance 1 from its own n values. Rows never mix, so candidate
/// equivariance and context invariance are unaffected.
TensorPtr normalize_rows(Tape& t, const TensorPtr& a, double eps = 1e-5);

/// Whole-matrix normalization of an [m,n] tensor with one mean/variance
/// over every element. Row statistics are reduced in canonical order, so
/// the output is bitwise equivariant under row permutation. This is the
/// per-instance normalization over the candidate-set and feature axes.
TensorPtr normalize_block(Tape& t, const TensorPtr& a, double eps = 1e-5);

/// Forward takes the values of `hard`; backward passes gradients straight
/// through to `soft`. Used for hard categorical sampling.
TensorPtr straight_through(Tape& t, const TensorPtr& soft, const TensorPtr& hard);

/// Sum of same-shape vectors in a canonical order (sorted by a total order
/// on their contents), so the result is bitwise independent of argument
/// order. This is what makes row/column permutation invariance exact.
TensorPtr canonical_sum(Tape& t, std::span<const TensorPtr> parts);
/// Same, over the rows of an [m,n] matrix; yields [n].
TensorPtr canonical_row_sum(Tape& t, const TensorPtr& a);

/// True if the canonical order would place a before b.
bool canonical_before(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace copi
