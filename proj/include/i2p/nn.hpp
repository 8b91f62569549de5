#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>

#include "i2p/autograd.hpp"
#include "i2p/tensor.hpp"

namespace i2p::nn {

using ad::Tape;
using ad::Var;

using Rng = std::mt19937_64;

inline constexpr double kLayerNormEps = 1e-5;

// Parameters of one pre-norm transformer block of width D.
template <typename T>
struct BlockParams {
    Tensor<T> ln1_gamma, ln1_beta;  // (D)
    Tensor<T> wq, wk, wv;           // (D, D)
    Tensor<T> bq, bk, bv;           // (D)
    Tensor<T> wo, bo;               // (D, D), (D)
    Tensor<T> ln2_gamma, ln2_beta;  // (D)
    Tensor<T> w1, b1;               // (D, H)
    Tensor<T> w2, b2;               // (H, D)

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + "ln1.gamma", ln1_gamma);
        f(prefix + "ln1.beta", ln1_beta);
        f(prefix + "attn.wq", wq);
        f(prefix + "attn.bq", bq);
        f(prefix + "attn.wk", wk);
        f(prefix + "attn.bk", bk);
        f(prefix + "attn.wv", wv);
        f(prefix + "attn.bv", bv);
        f(prefix + "attn.wo", wo);
        f(prefix + "attn.bo", bo);
        f(prefix + "ln2.gamma", ln2_gamma);
        f(prefix + "ln2.beta", ln2_beta);
        f(prefix + "ffn.w1", w1);
        f(prefix + "ffn.b1", b1);
        f(prefix + "ffn.w2", w2);
        f(prefix + "ffn.b2", b2);
    }
};

// Scaled uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

template <typename T>
BlockParams<T> init_block(std::size_t width, std::size_t hidden, Rng& rng);

// Validates every tensor of a block against width D; returns the hidden width.
template <typename T>
std::size_t check_block(const BlockParams<T>& p, std::size_t width);

// Binds a parameter into a tape: a differentiable leaf when `grads` is given,
// otherwise a constant reference.
template <typename P, typename T>
Var<T> bind(Tape<T>& tape, const P& params, P* grads, Tensor<T> P::*member) {
    if (grads) return tape.param(params.*member, &(grads->*member));
    return tape.constant_ref(params.*member);
}

// Tape-level building blocks -------------------------------------------------

template <typename T>
struct AttentionVars {
    Var<T> output;  // (N, D)
    Var<T> attn;    // (heads, N, N)
    Var<T> attn_output;  // projected attention output before the residual
};

// Multi-head self-attention on already-normalized tokens: softmax(QK^T/sqrt(d_head)) V,
// followed by the output projection.
template <typename T>
AttentionVars<T> self_attention(Var<T> x, const BlockParams<T>& p, BlockParams<T>* g, std::size_t heads);

// Pre-norm block: x' = x + Attn(LN1(x)); y = x' + FFN(LN2(x')), FFN = W2 GELU(W1 h).
template <typename T>
AttentionVars<T> transformer_block(Var<T> x, const BlockParams<T>& p, BlockParams<T>* g, std::size_t heads);

// Value-level API --------------------------------------------------------------

template <typename T>
struct AttentionOutput {
    Tensor<T> output;  // (N, D)
    Tensor<T> attn;    // (heads, N, N)
};

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// Softmax along `axis` of a tensor of any rank, stabilized by max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Attention applied directly to X (no layer norm), returning the projected output.
template <typename T>
AttentionOutput<T> self_attention(const Tensor<T>& x, const BlockParams<T>& p, std::size_t heads);

template <typename T>
std::pair<Tensor<T>, AttentionOutput<T>> transformer_block(const Tensor<T>& x, const BlockParams<T>& p,
                                                           std::size_t heads);

// Gradient checking --------------------------------------------------------------

struct GradCheckReport {
    bool ok = true;             // false when f or a gradient is non-finite
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;      // at worst_index
    double numeric = 0.0;
    std::size_t checked = 0;
    std::string message;
};

// Evaluates f at theta; fills `grad` (same length) when it is non-empty.
using ScalarFn = std::function<double(std::span<const double> theta, std::span<double> grad)>;

// Compares the reverse-mode gradient of f against central differences
// (f(theta + h e_i) - f(theta - h e_i)) / 2h. The per-coordinate relative error is
// |a - n| / max(|a|, |n|, abs_floor). `coords` restricts the check to a subset
// (all coordinates when empty).
GradCheckReport grad_check(const ScalarFn& f, std::span<const double> theta, double h, double abs_floor = 1e-8,
                           std::span<const std::size_t> coords = {});

}  // namespace i2p::nn
