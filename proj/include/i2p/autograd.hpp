#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation of one forward pass as a node holding its
// value and a backward closure. Tapes are single-owner: one tape per sample
// and per thread, never shared. Parameter leaves reference tensors owned by the
// caller and accumulate their gradient into a caller-provided sink after
// backward().

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "i2p/kernels.hpp"
#include "i2p/tensor.hpp"

namespace i2p::ad {

template <typename T>
class Tape;

template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
public:
    using Backward = std::function<void(Tape&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    Var<T> constant(Tensor<T> value);
    // Constant referencing caller-owned storage; the tensor must outlive the tape.
    Var<T> constant_ref(const Tensor<T>& value);
    // Differentiable leaf whose gradient stays on the tape (read it with grad()).
    Var<T> leaf(Tensor<T> value);
    // Parameter leaf: value is referenced, gradient is added into *sink.
    Var<T> param(const Tensor<T>& value, Tensor<T>* sink);

    // Appends an operation node. `backward` is dropped when no input needs a gradient.
    Var<T> push(Tensor<T> value, bool needs_grad, Backward backward);

    const Tensor<T>& value(std::size_t id) const;
    const Tensor<T>& value(Var<T> v) const { return value(v.id); }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    bool needs_grad(Var<T> v) const { return needs_grad(v.id); }
    // Gradient buffer of a node, zero-allocated on first access.
    Tensor<T>& grad(std::size_t id);
    Tensor<T>& grad(Var<T> v) { return grad(v.id); }
    bool has_grad(std::size_t id) const { return nodes_[id].grad_ready; }

    // Seeds d(root)/d(root) = 1 for a scalar root, then runs backward().
    void backward(Var<T> root);
    // Propagates gradients already seeded through grad(); flushes parameter sinks.
    void backward();

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        const Tensor<T>* external = nullptr;
        Tensor<T> grad;
        Tensor<T>* sink = nullptr;
        bool grad_ready = false;
        bool needs_grad = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return tape->value(id);
}

// ---------------------------------------------------------------------------
// Elementwise and structural operations.

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> add_scalar(Var<T> a, T s);
template <typename T> Var<T> square(Var<T> a);
template <typename T> Var<T> sqrt(Var<T> a);
template <typename T> Var<T> tanh(Var<T> a);
// artanh(min(x, limit)); the gradient is zero where the clamp is active.
template <typename T> Var<T> artanh_clamped(Var<T> a, T limit);
template <typename T> Var<T> relu(Var<T> a);
// Exact (erf) GELU.
template <typename T> Var<T> gelu(Var<T> a);

template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);

template <typename T> Var<T> reshape(Var<T> a, Shape shape);
// Rows [begin, end) of a matrix.
template <typename T> Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end);
template <typename T> Var<T> concat_rows(Var<T> a, Var<T> b);
template <typename T> Var<T> gather_rows(Var<T> a, std::vector<std::size_t> index);
// Elements a[i] for a list of flat indices, as a vector.
template <typename T> Var<T> gather(Var<T> a, std::vector<std::size_t> index);

// ---------------------------------------------------------------------------
// Linear algebra.

// op(a) * op(b) for matrices.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, kernels::Trans ta = kernels::Trans::N, kernels::Trans tb = kernels::Trans::N);
// x (R x C) + b (C) broadcast over rows.
template <typename T> Var<T> add_row(Var<T> x, Var<T> b);
// x W + b.
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);

// Per-row reductions and broadcasts of a matrix (R x C).
template <typename T> Var<T> row_dot(Var<T> a, Var<T> b);
template <typename T> Var<T> row_sqnorm(Var<T> a);
// Euclidean row norm; the gradient of a zero row is taken as zero.
template <typename T> Var<T> row_norm(Var<T> a);
// Row i of x multiplied by s[i].
template <typename T> Var<T> mul_rows(Var<T> x, Var<T> s);

enum class Axis { Rows, Cols };
// Divides each row (Axis::Rows) or column (Axis::Cols) by max(norm, eps).
template <typename T> Var<T> l2_normalize(Var<T> x, Axis axis, T eps);

// ---------------------------------------------------------------------------
// Network layers.

template <typename T> Var<T> softmax_rows(Var<T> x);
template <typename T> Var<T> layer_norm_rows(Var<T> x, Var<T> gamma, Var<T> beta, T eps);
// (G*k x C) -> (G x C): channel-wise max over each consecutive group of k rows.
template <typename T> Var<T> segment_max_rows(Var<T> x, std::size_t k);

// Multi-head attention probabilities softmax(q_h k_h^T * scale), shape (heads, N, N).
template <typename T> Var<T> attention_probs(Var<T> q, Var<T> k, std::size_t heads, T scale);
// Per-head attn_h * v_h, concatenated back to (N, D).
template <typename T> Var<T> attention_mix(Var<T> attn, Var<T> v, std::size_t heads);

}  // namespace i2p::ad
