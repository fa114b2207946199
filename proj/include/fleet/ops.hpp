#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fleet/tensor.hpp"

// Differentiable operations over Tensor<T>. Each op validates shapes,
// computes the forward value, and registers a backward closure that
// accumulates into parents that require gradients.
namespace fleet {

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
    if (a.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " +
                         shape_str(a.shape()));
    }
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    auto pa = a.node(), pb = b.node();
    return detail::make_op_result<T>(
        a.shape(), std::move(out), {pa, pb},
        [pa, pb](detail::TensorNode<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
            }
        },
        "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    auto pa = a.node(), pb = b.node();
    return detail::make_op_result<T>(
        a.shape(), std::move(out), {pa, pb},
        [pa, pb](detail::TensorNode<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
            }
        },
        "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    auto pa = a.node(), pb = b.node();
    return detail::make_op_result<T>(
        a.shape(), std::move(out), {pa, pb},
        [pa, pb](detail::TensorNode<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pa->grad[i] += self.grad[i] * pb->data[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pb->grad[i] += self.grad[i] * pa->data[i];
            }
        },
        "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    auto pa = a.node();
    return detail::make_op_result<T>(
        a.shape(), std::move(out), {pa},
        [pa, s](detail::TensorNode<T>& self) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * s;
        },
        "scale");
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, T(-1));
}

// matrix(r x c) + row(c), broadcast down the rows. Used for biases.
template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& m, const Tensor<T>& row) {
    detail::require_matrix(m, "add_rowwise");
    const std::size_t r = m.rows(), c = m.cols();
    if (row.size() != c) {
        throw ShapeError("add_rowwise: row length " + shape_str(row.shape()) +
                         " does not match matrix " + shape_str(m.shape()));
    }
    std::vector<T> out(m.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m[i * c + j] + row[j];
    auto pm = m.node(), pr = row.node();
    return detail::make_op_result<T>(
        m.shape(), std::move(out), {pm, pr},
        [pm, pr, r, c](detail::TensorNode<T>& self) {
            if (pm->requires_grad) {
                pm->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pm->grad[i] += self.grad[i];
            }
            if (pr->requires_grad) {
                pr->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) pr->grad[j] += self.grad[i * c + j];
            }
        },
        "add_rowwise");
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    std::vector<T> out(m * n, T(0));
    detail::gemm_nn_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto pa = a.node(), pb = b.node();
    return detail::make_op_result<T>(
        Shape{m, n}, std::move(out), {pa, pb},
        [pa, pb, m, k, n](detail::TensorNode<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                detail::gemm_nt_acc(self.grad.data(), pb->data.data(), pa->grad.data(), m, n, k);
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                detail::gemm_tn_acc(pa->data.data(), self.grad.data(), pb->grad.data(), m, k, n);
            }
        },
        "matmul");
}

// a(m x k) . b(n x k)^T without materializing the transpose.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_matrix(a, "matmul_nt");
    detail::require_matrix(b, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw ShapeError("matmul_nt: inner extents differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
    }
    std::vector<T> out(m * n, T(0));
    detail::gemm_nt_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto pa = a.node(), pb = b.node();
    return detail::make_op_result<T>(
        Shape{m, n}, std::move(out), {pa, pb},
        [pa, pb, m, k, n](detail::TensorNode<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                detail::gemm_nn_acc(self.grad.data(), pb->data.data(), pa->grad.data(), m, n, k);
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                detail::gemm_tn_acc(self.grad.data(), pa->data.data(), pb->grad.data(), m, n, k);
            }
        },
        "matmul_nt");
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_matrix(a, "transpose");
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
    auto pa = a.node();
    return detail::make_op_result<T>(
        Shape{c, r}, std::move(out), {pa},
        [pa, r, c](detail::TensorNode<T>& self) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) pa->grad[i * c + j] += self.grad[j * r + i];
        },
        "transpose");
}

// Row-wise softmax with temperature; max-subtracted for stability.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, T temperature = T(1)) {
    if (!(temperature > T(0))) {
        throw ValueError("softmax: temperature must be > 0");
    }
    const std::size_t r = x.rows(), c = x.cols();
    if (c == 0) throw ShapeError("softmax: empty rows");
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < r; ++i) {
        const T* row = x.data().data() + i * c;
        T* orow = out.data() + i * c;
        T mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (std::size_t j = 0; j < c; ++j) {
            orow[j] = std::exp((row[j] - mx) / temperature);
            sum += orow[j];
        }
        for (std::size_t j = 0; j < c; ++j) orow[j] /= sum;
    }
    auto pa = x.node();
    return detail::make_op_result<T>(
        x.shape(), std::move(out), {pa},
        [pa, r, c, temperature](detail::TensorNode<T>& self) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                const T* p = self.data.data() + i * c;
                const T* g = self.grad.data() + i * c;
                T dot = 0;
                for (std::size_t j = 0; j < c; ++j) dot += g[j] * p[j];
                for (std::size_t j = 0; j < c; ++j)
                    pa->grad[i * c + j] += p[j] * (g[j] - dot) / temperature;
            }
        },
        "softmax");
}

// Normalizes each row of x to zero mean / unit variance, then scales by
// gamma and shifts by beta. 1-D input is treated as a single row.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
    const std::size_t r = x.rows(), c = x.cols();
    if (gamma.size() != c || beta.size() != c) {
        throw ShapeError("layer_norm: gamma/beta length must match trailing extent " +
                         std::to_string(c) + ", got " + shape_str(gamma.shape()) +
                         " and " + shape_str(beta.shape()));
    }
    std::vector<T> out(x.size());
    std::vector<T> xhat(x.size());
    std::vector<T> inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        const T* row = x.data().data() + i * c;
        T mean = 0;
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<T>(c);
        T var = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const T d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < c; ++j) {
            const T xh = (row[j] - mean) * is;
            xhat[i * c + j] = xh;
            out[i * c + j] = gamma[j] * xh + beta[j];
        }
    }
    auto px = x.node(), pg = gamma.node(), pb = beta.node();
    return detail::make_op_result<T>(
        x.shape(), std::move(out), {px, pg, pb},
        [px, pg, pb, r, c, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](detail::TensorNode<T>& self) {
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            if (px->requires_grad) px->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                const T* g = self.grad.data() + i * c;
                const T* xh = xhat.data() + i * c;
                if (pg->requires_grad)
                    for (std::size_t j = 0; j < c; ++j) pg->grad[j] += g[j] * xh[j];
                if (pb->requires_grad)
                    for (std::size_t j = 0; j < c; ++j) pb->grad[j] += g[j];
                if (px->requires_grad) {
                    T sum_gxh = 0, sum_gxh_xh = 0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const T gx = g[j] * pg->data[j];
                        sum_gxh += gx;
                        sum_gxh_xh += gx * xh[j];
                    }
                    const T inv_c = T(1) / static_cast<T>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const T gx = g[j] * pg->data[j];
                        px->grad[i * c + j] +=
                            inv_std[i] * (gx - inv_c * sum_gxh - xh[j] * inv_c * sum_gxh_xh);
                    }
                }
            }
        },
        "layer_norm");
}

namespace detail {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <typename T>
T normal_cdf(T x) {
    return static_cast<T>(0.5 * std::erfc(-static_cast<double>(x) * kInvSqrt2));
}
}  // namespace detail

// GELU. Canonical form is x * Phi(x); the tanh approximation is available
// behind the flag.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x, bool tanh_approx = false) {
    std::vector<T> out(x.size());
    if (tanh_approx) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double v = x[i];
            const double inner = 0.7978845608028654 * (v + 0.044715 * v * v * v);
            out[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(inner)));
        }
    } else {
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = x[i] * detail::normal_cdf(x[i]);
    }
    auto pa = x.node();
    return detail::make_op_result<T>(
        x.shape(), std::move(out), {pa},
        [pa, tanh_approx](detail::TensorNode<T>& self) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double v = pa->data[i];
                double d;
                if (tanh_approx) {
                    const double k = 0.7978845608028654;
                    const double inner = k * (v + 0.044715 * v * v * v);
                    const double th = std::tanh(inner);
                    const double sech2 = 1.0 - th * th;
                    d = 0.5 * (1.0 + th) + 0.5 * v * sech2 * k * (1.0 + 3.0 * 0.044715 * v * v);
                } else {
                    const double phi = detail::kInvSqrt2Pi * std::exp(-0.5 * v * v);
                    d = detail::normal_cdf(v) + v * phi;
                }
                pa->grad[i] += self.grad[i] * static_cast<T>(d);
            }
        },
        "gelu");
}

// Probabilities below this are clamped before taking logs.
inline constexpr double kProbFloor = 1e-12;

// -sum(target * log(pred)) over probability vectors. Both inputs must sum
// to 1 within 1e-4 per row of length K (flat tensors treated as one row).
template <typename T>
Tensor<T> cross_entropy_soft(const Tensor<T>& target, const Tensor<T>& pred) {
    detail::require_same_shape(target, pred, "cross_entropy_soft");
    auto check_normalized = [](const Tensor<T>& t, const char* name) {
        T sum = 0;
        for (std::size_t i = 0; i < t.size(); ++i) sum += t[i];
        if (std::abs(static_cast<double>(sum) - 1.0) > 1e-4) {
            throw ValueError(std::string("cross_entropy_soft: ") + name +
                             " is not a probability vector (sum=" +
                             std::to_string(static_cast<double>(sum)) + ")");
        }
    };
    check_normalized(target, "target");
    check_normalized(pred, "pred");
    const T floor = static_cast<T>(kProbFloor);
    T loss = 0;
    for (std::size_t i = 0; i < target.size(); ++i)
        loss -= target[i] * std::log(std::max(pred[i], floor));
    auto pt = target.node(), pp = pred.node();
    return detail::make_op_result<T>(
        Shape{1}, {loss}, {pt, pp},
        [pt, pp, floor](detail::TensorNode<T>& self) {
            const T g = self.grad[0];
            if (pp->requires_grad) {
                pp->ensure_grad();
                for (std::size_t i = 0; i < pp->data.size(); ++i) {
                    if (pp->data[i] > floor)
                        pp->grad[i] -= g * pt->data[i] / pp->data[i];
                }
            }
            if (pt->requires_grad) {
                pt->ensure_grad();
                for (std::size_t i = 0; i < pt->data.size(); ++i)
                    pt->grad[i] -= g * std::log(std::max(pp->data[i], floor));
            }
        },
        "cross_entropy_soft");
}

// Mean over elements of the Huber-style loss: 0.5 x^2 / beta for |x| <= beta,
// |x| - 0.5 beta otherwise, where x = pred - target.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& target, T beta) {
    detail::require_same_shape(pred, target, "smooth_l1");
    if (!(beta > T(0))) throw ValueError("smooth_l1: beta must be > 0");
    const std::size_t n = pred.size();
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T x = pred[i] - target[i];
        const T ax = std::abs(x);
        loss += ax <= beta ? T(0.5) * x * x / beta : ax - T(0.5) * beta;
    }
    loss /= static_cast<T>(n);
    auto pp = pred.node(), pt = target.node();
    return detail::make_op_result<T>(
        Shape{1}, {loss}, {pp, pt},
        [pp, pt, beta, n](detail::TensorNode<T>& self) {
            const T g = self.grad[0] / static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const T x = pp->data[i] - pt->data[i];
                const T d = std::abs(x) <= beta ? x / beta : (x > 0 ? T(1) : T(-1));
                if (pp->requires_grad) {
                    pp->ensure_grad();
                    pp->grad[i] += g * d;
                }
                if (pt->requires_grad) {
                    pt->ensure_grad();
                    pt->grad[i] -= g * d;
                }
            }
        },
        "smooth_l1");
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
    auto pa = x.node();
    return detail::make_op_result<T>(
        Shape{1}, {s}, {pa},
        [pa](detail::TensorNode<T>& self) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < pa->data.size(); ++i) pa->grad[i] += self.grad[0];
        },
        "sum_all");
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return scale(sum_all(x), T(1) / static_cast<T>(x.size()));
}

// Column means: (r x c) -> (1 x c).
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
    detail::require_matrix(x, "mean_rows");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<T> out(c, T(0));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
    for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<T>(r);
    auto pa = x.node();
    return detail::make_op_result<T>(
        Shape{1, c}, std::move(out), {pa},
        [pa, r, c](detail::TensorNode<T>& self) {
            pa->ensure_grad();
            const T inv_r = T(1) / static_cast<T>(r);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) pa->grad[i * c + j] += self.grad[j] * inv_r;
        },
        "mean_rows");
}

// Gathers rows by index (duplicates allowed); gradient scatters back.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::size_t> idx) {
    detail::require_matrix(x, "gather_rows");
    const std::size_t r = x.rows(), c = x.cols();
    for (const std::size_t i : idx) {
        if (i >= r) {
            throw ValueError("gather_rows: index " + std::to_string(i) +
                             " out of range for " + std::to_string(r) + " rows");
        }
    }
    std::vector<T> out(idx.size() * c);
    for (std::size_t t = 0; t < idx.size(); ++t)
        std::copy_n(x.data().data() + idx[t] * c, c, out.data() + t * c);
    auto pa = x.node();
    const std::size_t k = idx.size();
    return detail::make_op_result<T>(
        Shape{k, c}, std::move(out), {pa},
        [pa, c, idx = std::move(idx)](detail::TensorNode<T>& self) {
            pa->ensure_grad();
            for (std::size_t t = 0; t < idx.size(); ++t)
                for (std::size_t j = 0; j < c; ++j)
                    pa->grad[idx[t] * c + j] += self.grad[t * c + j];
        },
        "gather_rows");
}

template <typename T>
Tensor<T> row_range(const Tensor<T>& x, std::size_t r0, std::size_t r1) {
    std::vector<std::size_t> idx(r1 - r0);
    std::iota(idx.begin(), idx.end(), r0);
    return gather_rows(x, std::move(idx));
}

template <typename T>
Tensor<T> col_range(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
    detail::require_matrix(x, "col_range");
    const std::size_t r = x.rows(), c = x.cols();
    if (!(c0 < c1 && c1 <= c)) {
        throw ValueError("col_range: invalid range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + std::to_string(c) + " cols");
    }
    const std::size_t w = c1 - c0;
    std::vector<T> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        std::copy_n(x.data().data() + i * c + c0, w, out.data() + i * w);
    auto pa = x.node();
    return detail::make_op_result<T>(
        Shape{r, w}, std::move(out), {pa},
        [pa, r, c, c0, w](detail::TensorNode<T>& self) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    pa->grad[i * c + c0 + j] += self.grad[i * w + j];
        },
        "col_range");
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("concat_rows: column mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
    const std::size_t ra = a.rows(), rb = b.rows(), c = a.cols();
    std::vector<T> out(a.size() + b.size());
    std::copy(a.data().begin(), a.data().end(), out.begin());
    std::copy(b.data().begin(), b.data().end(), out.begin() + a.size());
    auto pa = a.node(), pb = b.node();
    const std::size_t na = a.size();
    return detail::make_op_result<T>(
        Shape{ra + rb, c}, std::move(out), {pa, pb},
        [pa, pb, na](detail::TensorNode<T>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < na; ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < pb->data.size(); ++i)
                    pb->grad[i] += self.grad[na + i];
            }
        },
        "concat_rows");
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("concat_cols: row mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
    const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols();
    std::vector<T> out(r * (ca + cb));
    for (std::size_t i = 0; i < r; ++i) {
        std::copy_n(a.data().data() + i * ca, ca, out.data() + i * (ca + cb));
        std::copy_n(b.data().data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
    }
    auto pa = a.node(), pb = b.node();
    return detail::make_op_result<T>(
        Shape{r, ca + cb}, std::move(out), {pa, pb},
        [pa, pb, r, ca, cb](detail::TensorNode<T>& self) {
            const std::size_t w = ca + cb;
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < ca; ++j)
                        pa->grad[i * ca + j] += self.grad[i * w + j];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < cb; ++j)
                        pb->grad[i * cb + j] += self.grad[i * w + ca + j];
            }
        },
        "concat_cols");
}

// Replaces the given rows of x with a shared (1 x c) row. Gradient for the
// replaced rows flows to the replacement, not to x.
template <typename T>
Tensor<T> replace_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows,
                       const Tensor<T>& replacement) {
    detail::require_matrix(x, "replace_rows");
    const std::size_t r = x.rows(), c = x.cols();
    if (replacement.size() != c) {
        throw ShapeError("replace_rows: replacement width " +
                         shape_str(replacement.shape()) + " does not match " +
                         shape_str(x.shape()));
    }
    for (const std::size_t i : rows) {
        if (i >= r) {
            throw ValueError("replace_rows: row index " + std::to_string(i) +
                             " out of range for " + std::to_string(r) + " rows");
        }
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    std::vector<bool> replaced(r, false);
    for (const std::size_t i : rows) {
        replaced[i] = true;
        std::copy_n(replacement.data().data(), c, out.data() + i * c);
    }
    auto px = x.node(), pr = replacement.node();
    return detail::make_op_result<T>(
        x.shape(), std::move(out), {px, pr},
        [px, pr, r, c, replaced = std::move(replaced)](detail::TensorNode<T>& self) {
            if (px->requires_grad) {
                px->ensure_grad();
                for (std::size_t i = 0; i < r; ++i) {
                    if (replaced[i]) continue;
                    for (std::size_t j = 0; j < c; ++j)
                        px->grad[i * c + j] += self.grad[i * c + j];
                }
            }
            if (pr->requires_grad) {
                pr->ensure_grad();
                for (std::size_t i = 0; i < r; ++i) {
                    if (!replaced[i]) continue;
                    for (std::size_t j = 0; j < c; ++j) pr->grad[j] += self.grad[i * c + j];
                }
            }
        },
        "replace_rows");
}

// Sparse linear recombination of rows: out[t] = sum_i w * x[src[i]].
// Used for resampling positional tables onto a different patch grid.
struct RowMix {
    std::vector<std::pair<std::size_t, double>> terms;
};

template <typename T>
Tensor<T> mix_rows(const Tensor<T>& x, const std::vector<RowMix>& mixes) {
    detail::require_matrix(x, "mix_rows");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<T> out(mixes.size() * c, T(0));
    for (std::size_t t = 0; t < mixes.size(); ++t) {
        for (const auto& [src, w] : mixes[t].terms) {
            if (src >= r) throw ValueError("mix_rows: source row out of range");
            const T wt = static_cast<T>(w);
            for (std::size_t j = 0; j < c; ++j) out[t * c + j] += wt * x[src * c + j];
        }
    }
    auto pa = x.node();
    const std::size_t k = mixes.size();
    return detail::make_op_result<T>(
        Shape{k, c}, std::move(out), {pa},
        [pa, c, mixes](detail::TensorNode<T>& self) {
            pa->ensure_grad();
            for (std::size_t t = 0; t < mixes.size(); ++t) {
                for (const auto& [src, w] : mixes[t].terms) {
                    const T wt = static_cast<T>(w);
                    for (std::size_t j = 0; j < c; ++j)
                        pa->grad[src * c + j] += wt * self.grad[t * c + j];
                }
            }
        },
        "mix_rows");
}

}  // namespace fleet
