#include "copi/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace copi {

TensorPtr Tensor::make(std::vector<int> shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    int64_t n = 1;
    for (int d : t->shape) {
        if (d <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_str(t->shape));
        n *= d;
    }
    t->values.assign(static_cast<size_t>(n), 0.0);
    t->set_requires_grad(requires_grad);
    return t;
}

TensorPtr Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    int64_t n = 1;
    for (int d : t->shape) n *= d;
    if (n != static_cast<int64_t>(values.size()))
        throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                    " values for shape " + shape_str(t->shape));
    t->values = std::move(values);
    t->set_requires_grad(requires_grad);
    return t;
}

TensorPtr Tensor::scalar(double v, bool requires_grad) {
    return from({1}, {v}, requires_grad);
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void Tape::record(const char* name, TensorPtr output, std::function<void()> backward_rule) {
    ops_.push_back(Op{name, std::move(output), std::move(backward_rule)});
}

void Tape::backward(const TensorPtr& loss) {
    if (loss->size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss->shape));
    // Intermediates produced on this tape start from zero; leaves keep
    // accumulating so batched losses sum.
    for (auto& op : ops_) op.output->zero_grad();
    if (loss->requires_grad) loss->grad[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
}

void Tape::clear() { ops_.clear(); }

namespace {

[[noreturn]] void shape_error(const char* prim, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(prim) + ": shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
}

[[noreturn]] void shape_error(const char* prim, const Tensor& a, const std::string& why) {
    throw std::invalid_argument(std::string(prim) + ": " + why + ", got " + shape_str(a.shape));
}

// Output tensor for an op; grad slot allocated iff it will be recorded.
TensorPtr out_like(std::vector<int> shape, bool rg) {
    auto t = Tensor::make(std::move(shape));
    t->set_requires_grad(rg);
    return t;
}

bool track(const Tape& t, std::initializer_list<const TensorPtr*> ins) {
    if (!t.recording) return false;
    for (auto* p : ins)
        if ((*p)->requires_grad) return true;
    return false;
}

void require_rank2(const char* prim, const Tensor& a) {
    if (a.shape.size() != 2) shape_error(prim, a, "expected rank 2");
}

}  // namespace

TensorPtr add(Tape& t, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) shape_error("add", *a, *b);
    const bool rg = track(t, {&a, &b});
    auto out = out_like(a->shape, rg);
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] + b->values[i];
    if (rg)
        t.record("add", out, [a, b, out] {
            const auto& g = out->grad;
            if (a->requires_grad)
                for (size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i];
            if (b->requires_grad)
                for (size_t i = 0; i < g.size(); ++i) b->grad[i] += g[i];
        });
    return out;
}

TensorPtr sub(Tape& t, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) shape_error("sub", *a, *b);
    const bool rg = track(t, {&a, &b});
    auto out = out_like(a->shape, rg);
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] - b->values[i];
    if (rg)
        t.record("sub", out, [a, b, out] {
            const auto& g = out->grad;
            if (a->requires_grad)
                for (size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i];
            if (b->requires_grad)
                for (size_t i = 0; i < g.size(); ++i) b->grad[i] -= g[i];
        });
    return out;
}

TensorPtr mul(Tape& t, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) shape_error("mul", *a, *b);
    const bool rg = track(t, {&a, &b});
    auto out = out_like(a->shape, rg);
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * b->values[i];
    if (rg)
        t.record("mul", out, [a, b, out] {
            const auto& g = out->grad;
            if (a->requires_grad)
                for (size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i] * b->values[i];
            if (b->requires_grad)
                for (size_t i = 0; i < g.size(); ++i) b->grad[i] += g[i] * a->values[i];
        });
    return out;
}

TensorPtr scale(Tape& t, const TensorPtr& a, double c) {
    const bool rg = track(t, {&a});
    auto out = out_like(a->shape, rg);
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * c;
    if (rg)
        t.record("scale", out, [a, c, out] {
            for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i] * c;
        });
    return out;
}

TensorPtr matmul(Tape& t, const TensorPtr& a, const TensorPtr& b) {
    require_rank2("matmul", *a);
    require_rank2("matmul", *b);
    if (a->shape[1] != b->shape[0]) shape_error("matmul", *a, *b);
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    const bool rg = track(t, {&a, &b});
    auto out = out_like({m, n}, rg);
    {
        const double* A = a->values.data();
        const double* B = b->values.data();
        double* C = out->values.data();
        for (int i = 0; i < m; ++i) {
            double* Ci = C + static_cast<size_t>(i) * n;
            const double* Ai = A + static_cast<size_t>(i) * k;
            for (int kk = 0; kk < k; ++kk) {
                const double aik = Ai[kk];
                const double* Bk = B + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) Ci[j] += aik * Bk[j];
            }
        }
    }
    if (rg)
        t.record("matmul", out, [a, b, out, m, k, n] {
            const double* G = out->grad.data();
            if (a->requires_grad) {
                // dA = G @ B^T
                const double* B = b->values.data();
                double* dA = a->grad.data();
                for (int i = 0; i < m; ++i) {
                    const double* Gi = G + static_cast<size_t>(i) * n;
                    double* dAi = dA + static_cast<size_t>(i) * k;
                    for (int kk = 0; kk < k; ++kk) {
                        const double* Bk = B + static_cast<size_t>(kk) * n;
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += Gi[j] * Bk[j];
                        dAi[kk] += acc;
                    }
                }
            }
            if (b->requires_grad) {
                // dB = A^T @ G
                const double* A = a->values.data();
                double* dB = b->grad.data();
                for (int i = 0; i < m; ++i) {
                    const double* Ai = A + static_cast<size_t>(i) * k;
                    const double* Gi = G + static_cast<size_t>(i) * n;
                    for (int kk = 0; kk < k; ++kk) {
                        const double aik = Ai[kk];
                        double* dBk = dB + static_cast<size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) dBk[j] += aik * Gi[j];
                    }
                }
            }
        });
    return out;
}

TensorPtr add_row(Tape& t, const TensorPtr& m, const TensorPtr& v) {
    require_rank2("add_row", *m);
    if (v->shape.size() != 1 || v->shape[0] != m->shape[1]) shape_error("add_row", *m, *v);
    const int rows = m->shape[0], n = m->shape[1];
    const bool rg = track(t, {&m, &v});
    auto out = out_like(m->shape, rg);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < n; ++j)
            out->values[static_cast<size_t>(i) * n + j] =
                m->values[static_cast<size_t>(i) * n + j] + v->values[j];
    if (rg)
        t.record("add_row", out, [m, v, out, rows, n] {
            const auto& g = out->grad;
            if (m->requires_grad)
                for (size_t i = 0; i < g.size(); ++i) m->grad[i] += g[i];
            if (v->requires_grad)
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < n; ++j) v->grad[j] += g[static_cast<size_t>(i) * n + j];
        });
    return out;
}

TensorPtr sub_row(Tape& t, const TensorPtr& m, const TensorPtr& v) {
    require_rank2("sub_row", *m);
    if (v->shape.size() != 1 || v->shape[0] != m->shape[1]) shape_error("sub_row", *m, *v);
    const int rows = m->shape[0], n = m->shape[1];
    const bool rg = track(t, {&m, &v});
    auto out = out_like(m->shape, rg);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < n; ++j)
            out->values[static_cast<size_t>(i) * n + j] =
                m->values[static_cast<size_t>(i) * n + j] - v->values[j];
    if (rg)
        t.record("sub_row", out, [m, v, out, rows, n] {
            const auto& g = out->grad;
            if (m->requires_grad)
                for (size_t i = 0; i < g.size(); ++i) m->grad[i] += g[i];
            if (v->requires_grad)
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < n; ++j) v->grad[j] -= g[static_cast<size_t>(i) * n + j];
        });
    return out;
}

TensorPtr relu(Tape& t, const TensorPtr& a) {
    const bool rg = track(t, {&a});
    auto out = out_like(a->shape, rg);
    for (size_t i = 0; i < out->values.size(); ++i)
        out->values[i] = a->values[i] > 0.0 ? a->values[i] : 0.0;
    if (rg)
        t.record("relu", out, [a, out] {
            for (size_t i = 0; i < out->grad.size(); ++i)
                if (a->values[i] > 0.0) a->grad[i] += out->grad[i];
        });
    return out;
}

TensorPtr sigmoid(Tape& t, const TensorPtr& a) {
    const bool rg = track(t, {&a});
    auto out = out_like(a->shape, rg);
    for (size_t i = 0; i < out->values.size(); ++i) {
        const double x = a->values[i];
        out->values[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    if (rg)
        t.record("sigmoid", out, [a, out] {
            for (size_t i = 0; i < out->grad.size(); ++i) {
                const double y = out->values[i];
                a->grad[i] += out->grad[i] * y * (1.0 - y);
            }
        });
    return out;
}

TensorPtr exp(Tape& t, const TensorPtr& a) {
    const bool rg = track(t, {&a});
    auto out = out_like(a->shape, rg);
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = std::exp(a->values[i]);
    if (rg)
        t.record("exp", out, [a, out] {
            for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i] * out->values[i];
        });
    return out;
}

TensorPtr log(Tape& t, const TensorPtr& a) {
    const bool rg = track(t, {&a});
    auto out = out_like(a->shape, rg);
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = std::log(a->values[i]);
    if (rg)
        t.record("log", out, [a, out] {
            for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i] / a->values[i];
        });
    return out;
}

TensorPtr softplus(Tape& t, const TensorPtr& a) {
    const bool rg = track(t, {&a});
    auto out = out_like(a->shape, rg);
    for (size_t i = 0; i < out->values.size(); ++i) {
        const double x = a->values[i];
        out->values[i] = x > 30.0 ? x : (x < -30.0 ? std::exp(x) : std::log1p(std::exp(x)));
    }
    if (rg)
        t.record("softplus", out, [a, out] {
            for (size_t i = 0; i < out->grad.size(); ++i) {
                const double x = a->values[i];
                const double s =
                    x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                a->grad[i] += out->grad[i] * s;
            }
        });
    return out;
}

TensorPtr sum_all(Tape& t, const TensorPtr& a) {
    const bool rg = track(t, {&a});
    auto out = out_like({1}, rg);
    double acc = 0.0;
    for (double v : a->values) acc += v;
    out->values[0] = acc;
    if (rg)
        t.record("sum_all", out, [a, out] {
            const double g = out->grad[0];
            for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
        });
    return out;
}

TensorPtr mean_all(Tape& t, const TensorPtr& a) {
    const bool rg = track(t, {&a});
    auto out = out_like({1}, rg);
    double acc = 0.0;
    for (double v : a->values) acc += v;
    const double inv = 1.0 / static_cast<double>(a->size());
    out->values[0] = acc * inv;
    if (rg)
        t.record("mean_all", out, [a, out, inv] {
            const double g = out->grad[0] * inv;
            for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
        });
    return out;
}

TensorPtr sum_axis(Tape& t, const TensorPtr& a, int axis) {
    require_rank2("sum_axis", *a);
    if (axis != 0 && axis != 1) shape_error("sum_axis", *a, "axis must be 0 or 1");
    const int m = a->shape[0], n = a->shape[1];
    const bool rg = track(t, {&a});
    auto out = out_like({axis == 0 ? n : m}, rg);
    if (axis == 0) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out->values[j] += a->values[static_cast<size_t>(i) * n + j];
    } else {
        for (int i = 0; i < m; ++i) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += a->values[static_cast<size_t>(i) * n + j];
            out->values[i] = acc;
        }
    }
    if (rg)
        t.record("sum_axis", out, [a, out, m, n, axis] {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    a->grad[static_cast<size_t>(i) * n + j] += out->grad[axis == 0 ? j : i];
        });
    return out;
}

TensorPtr mean_axis(Tape& t, const TensorPtr& a, int axis) {
    auto s = sum_axis(t, a, axis);
    return scale(t, s, 1.0 / static_cast<double>(a->shape[axis == 0 ? 0 : 1]));
}

TensorPtr concat(Tape& t, std::span<const TensorPtr> parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    int64_t total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p->shape.size() != 1) shape_error("concat", *p, "expected rank 1");
        total += p->size();
        rg = rg || (t.recording && p->requires_grad);
    }
    auto out = out_like({static_cast<int>(total)}, rg);
    int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->values.begin(), p->values.end(), out->values.begin() + off);
        off += p->size();
    }
    if (rg) {
        std::vector<TensorPtr> ins(parts.begin(), parts.end());
        t.record("concat", out, [ins, out] {
            int64_t off = 0;
            for (const auto& p : ins) {
                if (p->requires_grad)
                    for (int64_t i = 0; i < p->size(); ++i) p->grad[i] += out->grad[off + i];
                off += p->size();
            }
        });
    }
    return out;
}

TensorPtr stack_rows(Tape& t, std::span<const TensorPtr> rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
    const int n = static_cast<int>(rows[0]->size());
    bool rg = false;
    for (const auto& r : rows) {
        if (r->shape.size() != 1 || r->shape[0] != n) shape_error("stack_rows", *rows[0], *r);
        rg = rg || (t.recording && r->requires_grad);
    }
    auto out = out_like({static_cast<int>(rows.size()), n}, rg);
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i]->values.begin(), rows[i]->values.end(), out->values.begin() + i * n);
    if (rg) {
        std::vector<TensorPtr> ins(rows.begin(), rows.end());
        t.record("stack_rows", out, [ins, out, n] {
            for (size_t i = 0; i < ins.size(); ++i)
                if (ins[i]->requires_grad)
                    for (int j = 0; j < n; ++j) ins[i]->grad[j] += out->grad[i * n + j];
        });
    }
    return out;
}

TensorPtr slice_rows(Tape& t, const TensorPtr& a, int r0, int r1) {
    require_rank2("slice_rows", *a);
    if (r0 < 0 || r1 > a->shape[0] || r0 >= r1)
        shape_error("slice_rows", *a,
                    "bad row range [" + std::to_string(r0) + "," + std::to_string(r1) + ")");
    const int n = a->shape[1];
    const bool rg = track(t, {&a});
    auto out = out_like({r1 - r0, n}, rg);
    std::copy(a->values.begin() + static_cast<size_t>(r0) * n,
              a->values.begin() + static_cast<size_t>(r1) * n, out->values.begin());
    if (rg)
        t.record("slice_rows", out, [a, out, r0, n] {
            for (size_t i = 0; i < out->grad.size(); ++i)
                a->grad[static_cast<size_t>(r0) * n + i] += out->grad[i];
        });
    return out;
}

TensorPtr row(Tape& t, const TensorPtr& a, int r) {
    auto s = slice_rows(t, a, r, r + 1);
    return reshape(t, s, {a->shape[1]});
}

TensorPtr reshape(Tape& t, const TensorPtr& a, std::vector<int> shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    if (n != a->size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a->shape) + " as " +
                                    shape_str(shape));
    const bool rg = track(t, {&a});
    auto out = out_like(std::move(shape), rg);
    out->values = a->values;
    if (rg)
        t.record("reshape", out, [a, out] {
            for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
        });
    return out;
}

TensorPtr select(Tape& t, const TensorPtr& a, int64_t flat_index) {
    if (flat_index < 0 || flat_index >= a->size())
        shape_error("select", *a, "index " + std::to_string(flat_index) + " out of range");
    const bool rg = track(t, {&a});
    auto out = out_like({1}, rg);
    out->values[0] = a->values[flat_index];
    if (rg)
        t.record("select", out, [a, out, flat_index] { a->grad[flat_index] += out->grad[0]; });
    return out;
}

TensorPtr softmax(Tape& t, const TensorPtr& a) {
    if (a->shape.size() > 2) shape_error("softmax", *a, "expected rank 1 or 2");
    const int m = a->shape.size() == 2 ? a->shape[0] : 1;
    const int n = a->shape.size() == 2 ? a->shape[1] : a->shape[0];
    const bool rg = track(t, {&a});
    auto out = out_like(a->shape, rg);
    for (int i = 0; i < m; ++i) {
        const double* x = a->values.data() + static_cast<size_t>(i) * n;
        double* y = out->values.data() + static_cast<size_t>(i) * n;
        double mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (int j = 0; j < n; ++j) y[j] /= z;
    }
    if (rg)
        t.record("softmax", out, [a, out, m, n] {
            for (int i = 0; i < m; ++i) {
                const double* y = out->values.data() + static_cast<size_t>(i) * n;
                const double* g = out->grad.data() + static_cast<size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += g[j] * y[j];
                double* da = a->grad.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) da[j] += y[j] * (g[j] - dot);
            }
        });
    return out;
}

TensorPtr normalize(Tape& t, const TensorPtr& a, double eps) {
    const int64_t n = a->size();
    const bool rg = track(t, {&a});
    auto out = out_like(a->shape, rg);
    double mean = 0.0;
    for (double v : a->values) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : a->values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv_sd = 1.0 / std::sqrt(var + eps);
    for (int64_t i = 0; i < n; ++i) out->values[i] = (a->values[i] - mean) * inv_sd;
    if (rg)
        t.record("normalize", out, [a, out, n, inv_sd] {
            const auto& g = out->grad;
            const auto& y = out->values;
            double gm = 0.0, gym = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                gm += g[i];
                gym += g[i] * y[i];
            }
            gm /= static_cast<double>(n);
            gym /= static_cast<double>(n);
            for (int64_t i = 0; i < n; ++i) a->grad[i] += inv_sd * (g[i] - gm - y[i] * gym);
        });
    return out;
}

TensorPtr normalize_rows(Tape& t, const TensorPtr& a, double eps) {
    require_rank2("normalize_rows", *a);
    const int m = a->shape[0], n = a->shape[1];
    const bool rg = track(t, {&a});
    auto out = out_like(a->shape, rg);
    std::vector<double> inv_sd(m);
    for (int i = 0; i < m; ++i) {
        const double* x = a->values.data() + static_cast<size_t>(i) * n;
        double* y = out->values.data() + static_cast<size_t>(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += x[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= n;
        inv_sd[i] = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < n; ++j) y[j] = (x[j] - mean) * inv_sd[i];
    }
    if (rg)
        t.record("normalize_rows", out, [a, out, m, n, inv_sd] {
            for (int i = 0; i < m; ++i) {
                const double* g = out->grad.data() + static_cast<size_t>(i) * n;
                const double* y = out->values.data() + static_cast<size_t>(i) * n;
                double* da = a->grad.data() + static_cast<size_t>(i) * n;
                double gm = 0.0, gym = 0.0;
                for (int j = 0; j < n; ++j) {
                    gm += g[j];
                    gym += g[j] * y[j];
                }
                gm /= n;
                gym /= n;
                for (int j = 0; j < n; ++j) da[j] += inv_sd[i] * (g[j] - gm - y[j] * gym);
            }
        });
    return out;
}

TensorPtr normalize_block(Tape& t, const TensorPtr& a, double eps) {
    require_rank2("normalize_block", *a);
    const int m = a->shape[0], n = a->shape[1];
    const int64_t total = a->size();
    // Per-row partial sums combined in canonical row order keep the
    // statistics bitwise stable under any row permutation.
    std::vector<std::vector<double>> rows(m);
    std::vector<double> psum(m), psq(m);
    for (int i = 0; i < m; ++i) {
        const double* x = a->values.data() + static_cast<size_t>(i) * n;
        rows[i].assign(x, x + n);
        double s = 0.0, q = 0.0;
        for (int j = 0; j < n; ++j) {
            s += x[j];
            q += x[j] * x[j];
        }
        psum[i] = s;
        psq[i] = q;
    }
    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int i, int j) { return canonical_before(rows[i], rows[j]); });
    double sum = 0.0, sq = 0.0;
    for (int k = 0; k < m; ++k) {
        sum += psum[order[k]];
        sq += psq[order[k]];
    }
    const double mean = sum / static_cast<double>(total);
    const double var = sq / static_cast<double>(total) - mean * mean;
    const double inv_sd = 1.0 / std::sqrt(std::max(var, 0.0) + eps);

    const bool rg = track(t, {&a});
    auto out = out_like(a->shape, rg);
    for (int64_t i = 0; i < total; ++i) out->values[i] = (a->values[i] - mean) * inv_sd;
    if (rg)
        t.record("normalize_block", out, [a, out, total, inv_sd] {
            const auto& g = out->grad;
            const auto& y = out->values;
            double gm = 0.0, gym = 0.0;
            for (int64_t i = 0; i < total; ++i) {
                gm += g[i];
                gym += g[i] * y[i];
            }
            gm /= static_cast<double>(total);
            gym /= static_cast<double>(total);
            for (int64_t i = 0; i < total; ++i)
                a->grad[i] += inv_sd * (g[i] - gm - y[i] * gym);
        });
    return out;
}

TensorPtr straight_through(Tape& t, const TensorPtr& soft, const TensorPtr& hard) {
    if (soft->shape != hard->shape) shape_error("straight_through", *soft, *hard);
    const bool rg = track(t, {&soft});
    auto out = out_like(soft->shape, rg);
    out->values = hard->values;
    if (rg)
        t.record("straight_through", out, [soft, out] {
            for (size_t i = 0; i < out->grad.size(); ++i) soft->grad[i] += out->grad[i];
        });
    return out;
}

bool canonical_before(const std::vector<double>& a, const std::vector<double>& b) {
    // Numeric lexicographic order; ties broken by the bit pattern so that
    // the order never depends on presentation (signed zeros included).
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] < b[i]) return true;
        if (a[i] > b[i]) return false;
        const auto ba = std::bit_cast<uint64_t>(a[i]);
        const auto bb = std::bit_cast<uint64_t>(b[i]);
        if (ba != bb) return ba < bb;
    }
    return false;
}

TensorPtr canonical_sum(Tape& t, std::span<const TensorPtr> parts) {
    if (parts.empty()) throw std::invalid_argument("canonical_sum: no inputs");
    for (const auto& p : parts)
        if (p->shape != parts[0]->shape) shape_error("canonical_sum", *parts[0], *p);
    std::vector<size_t> order(parts.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t i, size_t j) {
        return canonical_before(parts[i]->values, parts[j]->values);
    });
    bool rg = false;
    for (const auto& p : parts) rg = rg || (t.recording && p->requires_grad);
    auto out = out_like(parts[0]->shape, rg);
    out->values = parts[order[0]]->values;
    for (size_t k = 1; k < order.size(); ++k) {
        const auto& v = parts[order[k]]->values;
        for (size_t i = 0; i < v.size(); ++i) out->values[i] += v[i];
    }
    if (rg) {
        std::vector<TensorPtr> ins(parts.begin(), parts.end());
        t.record("canonical_sum", out, [ins, out] {
            for (const auto& p : ins)
                if (p->requires_grad)
                    for (size_t i = 0; i < out->grad.size(); ++i) p->grad[i] += out->grad[i];
        });
    }
    return out;
}

TensorPtr canonical_row_sum(Tape& t, const TensorPtr& a) {
    require_rank2("canonical_row_sum", *a);
    const int m = a->shape[0], n = a->shape[1];
    std::vector<std::vector<double>> rows(m);
    for (int i = 0; i < m; ++i)
        rows[i].assign(a->values.begin() + static_cast<size_t>(i) * n,
                       a->values.begin() + static_cast<size_t>(i + 1) * n);
    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int i, int j) { return canonical_before(rows[i], rows[j]); });
    const bool rg = track(t, {&a});
    auto out = out_like({n}, rg);
    for (int k = 0; k < m; ++k) {
        const auto& r = rows[order[k]];
        for (int j = 0; j < n; ++j) out->values[j] += r[j];
    }
    if (rg)
        t.record("canonical_row_sum", out, [a, out, m, n] {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    a->grad[static_cast<size_t>(i) * n + j] += out->grad[j];
        });
    return out;
}

}  // namespace copi
