#include "copi/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace copi {

TensorPtr ParameterStore::add(const std::string& name, std::vector<int> shape) {
    if (has(name)) throw std::invalid_argument("parameter already registered: " + name);
    auto t = Tensor::make(std::move(shape), /*requires_grad=*/true);
    entries_.emplace_back(name, t);
    return t;
}

TensorPtr ParameterStore::get(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return t;
    throw std::invalid_argument("no such parameter: " + name);
}

bool ParameterStore::has(const std::string& name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return true;
    return false;
}

int64_t ParameterStore::scalar_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t->size();
    return n;
}

void ParameterStore::zero_grads() {
    for (auto& [name, t] : entries_) t->zero_grad();
}

std::vector<std::vector<double>> ParameterStore::snapshot_values() const {
    std::vector<std::vector<double>> snap;
    snap.reserve(entries_.size());
    for (const auto& [name, t] : entries_) snap.push_back(t->values);
    return snap;
}

void ParameterStore::restore_values(const std::vector<std::vector<double>>& snap) {
    if (snap.size() != entries_.size())
        throw std::invalid_argument("snapshot does not match parameter store");
    for (size_t i = 0; i < snap.size(); ++i) {
        if (snap[i].size() != entries_[i].second->values.size())
            throw std::invalid_argument("snapshot shape mismatch for " + entries_[i].first);
        entries_[i].second->values = snap[i];
    }
}

ParameterStore ParameterStore::clone() const {
    ParameterStore out;
    for (const auto& [name, t] : entries_) {
        auto c = out.add(name, t->shape);
        c->values = t->values;
    }
    return out;
}

void ParameterStore::init_uniform(Rng& rng) {
    uint64_t tag = 0;
    for (auto& [name, t] : entries_) {
        Rng stream = rng.split(tag++);
        if (t->shape.size() == 2) {
            const double bound = std::sqrt(6.0 / (t->shape[0] + t->shape[1]));
            for (auto& v : t->values) v = stream.uniform(-bound, bound);
        } else {
            for (auto& v : t->values) v = 0.0;
        }
    }
}

AdamState::AdamState(const ParameterStore& params, double lr, double beta1, double beta2,
                     double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, t] : params.entries()) {
        m_.emplace_back(t->values.size(), 0.0);
        v_.emplace_back(t->values.size(), 0.0);
    }
}

void AdamState::step(ParameterStore& params) {
    if (m_.size() != params.count())
        throw std::invalid_argument("adam state does not match parameter store");
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    size_t k = 0;
    for (auto& [name, t] : params.entries()) {
        auto& m = m_[k];
        auto& v = v_[k];
        ++k;
        for (size_t i = 0; i < t->values.size(); ++i) {
            const double g = t->grad[i];
            if (!std::isfinite(g))
                throw std::runtime_error("adam: non-finite gradient in parameter " + name);
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            t->values[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
        t->zero_grad();
    }
}

}  // namespace copi
