#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "fleet/errors.hpp"
#include "fleet/rng.hpp"

namespace fleet {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (const std::size_t e : s) n *= e;
    return n;
}

namespace detail {

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(TensorNode&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <typename T>
void check_finite(const std::vector<T>& v, const char* op) {
    for (const T x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value produced by ") + op);
        }
    }
}

// Post-order DFS: parents before node. Iterative so deep chains from
// property tests cannot blow the stack.
template <typename T>
std::vector<TensorNode<T>*> topo_order(TensorNode<T>* root) {
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode<T>* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace detail

// Dense row-major tensor with reverse-mode autodiff. Value-like handle:
// copies share the underlying node, clone() deep-copies.
template <typename T>
class Tensor {
public:
    using Node = detail::TensorNode<T>;

    Tensor() : node_(std::make_shared<Node>()) {}

    static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

    static Tensor full(Shape shape, T value) {
        Tensor t;
        t.node_->data.assign(shape_numel(shape), value);
        t.node_->shape = std::move(shape);
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<T> data) {
        if (shape_numel(shape) != data.size()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        return t;
    }

    static Tensor scalar(T value) { return full({1}, value); }

    static Tensor randn(Shape shape, Rng& rng, T sigma, bool truncated = false) {
        Tensor t = zeros(std::move(shape));
        for (T& x : t.node_->data) {
            x = static_cast<T>(truncated ? rng.truncated_normal(sigma)
                                         : rng.normal(0.0, sigma));
        }
        return t;
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->data.size(); }
    std::size_t rank() const { return node_->shape.size(); }

    // 2-D accessors; a 1-D tensor is treated as a single row.
    std::size_t rows() const { return rank() <= 1 ? 1 : node_->shape[0]; }
    std::size_t cols() const {
        if (rank() == 0) return size();
        return node_->shape[rank() - 1];
    }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }

    T operator[](std::size_t i) const { return node_->data[i]; }
    T& at(std::size_t i) { return node_->data[i]; }

    T item() const {
        if (size() != 1) {
            throw ValueError("item() on non-scalar tensor " + shape_str(shape()));
        }
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }

    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return node_->grad.size() == size(); }

    std::span<const T> grad() const {
        if (!has_grad()) {
            throw ValueError("gradient not computed; call backward() first");
        }
        return node_->grad;
    }

    std::span<T> grad_mut() {
        if (!has_grad()) node_->ensure_grad();
        return node_->grad;
    }

    void zero_grad() { node_->grad.assign(size(), T(0)); }

    // Deep copy with no graph attached.
    Tensor clone() const {
        Tensor t;
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        return t;
    }

    Tensor detach() const { return clone(); }

    // Reverse-mode sweep from a scalar. Each reachable node is visited
    // exactly once. Leaf grads accumulate across calls; zero_grad() resets.
    void backward() const {
        if (size() != 1) {
            throw ValueError("backward() requires a scalar loss, got " +
                             shape_str(shape()));
        }
        auto order = detail::topo_order<T>(node_.get());
        for (Node* n : order) {
            if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
        }
        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
    }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

// Builds the result node for an op: wires parents and the backward lambda
// only when some input actually tracks gradients.
template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> data,
                         std::vector<std::shared_ptr<TensorNode<T>>> parents,
                         std::function<void(TensorNode<T>&)> backward_fn,
                         const char* op_name) {
    check_finite(data, op_name);
    Tensor<T> out = Tensor<T>::from_data(std::move(shape), std::move(data));
    bool track = false;
    for (const auto& p : parents) track = track || p->requires_grad;
    if (track) {
        out.node()->requires_grad = true;
        out.node()->parents = std::move(parents);
        out.node()->backward_fn = std::move(backward_fn);
    }
    return out;
}

template <typename T>
void accumulate(TensorNode<T>& node, std::size_t i, T v) {
    node.grad[i] += v;
}

// Accumulating GEMM kernels, row-major. Written so the inner loops run over
// contiguous memory and auto-vectorize.
template <typename T>
void gemm_nn_acc(const T* __restrict a, const T* __restrict b, T* __restrict c,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* __restrict crow = c + i * n;
        const T* __restrict arow = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* __restrict brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c(m x n) += a(m x k) . b(n x k)^T
template <typename T>
void gemm_nt_acc(const T* __restrict a, const T* __restrict b, T* __restrict c,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* __restrict arow = a + i * k;
        T* __restrict crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* __restrict brow = b + j * k;
            T acc = 0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] += acc;
        }
    }
}

// c(p x q) += a(m x p)^T . b(m x q)
template <typename T>
void gemm_tn_acc(const T* __restrict a, const T* __restrict b, T* __restrict c,
                 std::size_t m, std::size_t p, std::size_t q) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* __restrict arow = a + i * p;
        const T* __restrict brow = b + i * q;
        for (std::size_t kk = 0; kk < p; ++kk) {
            const T av = arow[kk];
            T* __restrict crow = c + kk * q;
            for (std::size_t j = 0; j < q; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

}  // namespace fleet
