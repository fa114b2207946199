#pragma once

// Central finite-difference gradient checking, independent of the autodiff
// path it verifies. Double precision only.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fleet/ops.hpp"

namespace testutil {

using fleet::TensorD;

// Forward builds a fresh graph from the current leaf values and returns a
// scalar. Returns the worst discrepancy |analytic - numeric| scaled by
// max(1, |analytic|, |numeric|).
inline double max_grad_discrepancy(std::vector<TensorD>& inputs,
                                   const std::function<TensorD(std::vector<TensorD>&)>& forward,
                                   double h = 1e-6) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    TensorD loss = forward(inputs);
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) {
        analytic.emplace_back(t.grad().begin(), t.grad().end());
    }

    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t j = 0; j < inputs[i].size(); ++j) {
            const double original = inputs[i][j];
            inputs[i].at(j) = original + h;
            const double f_plus = forward(inputs).item();
            inputs[i].at(j) = original - h;
            const double f_minus = forward(inputs).item();
            inputs[i].at(j) = original;
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double ana = analytic[i][j];
            const double denom = std::max({1.0, std::abs(ana), std::abs(numeric)});
            worst = std::max(worst, std::abs(ana - numeric) / denom);
        }
    }
    return worst;
}

// Random tensor with entries in [-1, 1].
inline TensorD random_tensor(fleet::Shape shape, fleet::Rng& rng) {
    TensorD t = TensorD::zeros(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(-1.0, 1.0);
    return t;
}

struct OpCheckResult {
    std::string op;
    double worst = 0.0;
};

// Runs the gradient check for every differentiable operation on
// `instances` random cases each; returns per-op worst discrepancies.
std::vector<OpCheckResult> gradcheck_all_ops(int instances, std::uint64_t seed);

}  // namespace testutil
