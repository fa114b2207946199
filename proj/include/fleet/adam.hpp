#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fleet/tensor.hpp"

namespace fleet {

// Ordered, named collection of parameter tensors. Tensors are shared
// handles, so a ParamSet built from a model aliases the model's storage.
template <typename T>
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor<T>> tensors;

    void add(std::string name, Tensor<T> t) {
        names.push_back(std::move(name));
        tensors.push_back(std::move(t));
    }

    std::size_t size() const { return tensors.size(); }

    void append(const ParamSet& other) {
        for (std::size_t i = 0; i < other.size(); ++i)
            add(other.names[i], other.tensors[i]);
    }

    void set_requires_grad(bool v) {
        for (auto& t : tensors) t.set_requires_grad(v);
    }

    void zero_grad() {
        for (auto& t : tensors) t.zero_grad();
    }

    const Tensor<T>* find(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return &tensors[i];
        return nullptr;
    }
};

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
    long step_count = 0;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);
};

// Bias-corrected Adam update over every parameter in the set. Parameters
// with no gradient buffer (never touched by backward) are treated as
// zero-gradient. Throws NumericError on non-finite gradients before any
// state is mutated.
template <typename T>
void adam_step(ParamSet<T>& params, AdamState<T>& state, T lr) {
    if (lr < T(0)) throw ValueError("adam_step: lr must be >= 0");
    if (state.first_moment.empty()) {
        state.first_moment.resize(params.size());
        state.second_moment.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.first_moment[i].assign(params.tensors[i].size(), T(0));
            state.second_moment[i].assign(params.tensors[i].size(), T(0));
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw ShapeError("adam_step: state tracks " +
                         std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& t = params.tensors[i];
        if (state.first_moment[i].size() != t.size()) {
            throw ShapeError("adam_step: moment shape mismatch for " + params.names[i]);
        }
        if (!t.has_grad()) continue;
        for (const T g : t.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("adam_step: non-finite gradient in " + params.names[i]);
            }
        }
    }

    state.step_count += 1;
    const T b1t = static_cast<T>(std::pow(static_cast<double>(state.beta1),
                                          static_cast<double>(state.step_count)));
    const T b2t = static_cast<T>(std::pow(static_cast<double>(state.beta2),
                                          static_cast<double>(state.step_count)));
    const T c1 = T(1) / (T(1) - b1t);
    const T c2 = T(1) / (T(1) - b2t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& t = params.tensors[i];
        if (!t.has_grad()) continue;
        auto grad = t.grad();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        auto data = t.data();
        for (std::size_t j = 0; j < data.size(); ++j) {
            const T g = grad[j];
            m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * g * g;
            const T mhat = m[j] * c1;
            const T vhat = v[j] * c2;
            data[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace fleet
