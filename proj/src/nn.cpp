#include "i2p/nn.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "i2p/errors.hpp"

namespace i2p::nn {

template <typename T>
Tensor<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
BlockParams<T> init_block(std::size_t width, std::size_t hidden, Rng& rng) {
    BlockParams<T> p;
    p.ln1_gamma = Tensor<T>(Shape{width}, T(1));
    p.ln1_beta = Tensor<T>(Shape{width});
    p.wq = init_uniform<T>({width, width}, width, rng);
    p.wk = init_uniform<T>({width, width}, width, rng);
    p.wv = init_uniform<T>({width, width}, width, rng);
    p.bq = Tensor<T>(Shape{width});
    p.bk = Tensor<T>(Shape{width});
    p.bv = Tensor<T>(Shape{width});
    p.wo = init_uniform<T>({width, width}, width, rng);
    p.bo = Tensor<T>(Shape{width});
    p.ln2_gamma = Tensor<T>(Shape{width}, T(1));
    p.ln2_beta = Tensor<T>(Shape{width});
    p.w1 = init_uniform<T>({width, hidden}, width, rng);
    p.b1 = Tensor<T>(Shape{hidden});
    p.w2 = init_uniform<T>({hidden, width}, hidden, rng);
    p.b2 = Tensor<T>(Shape{width});
    return p;
}

template <typename T>
std::size_t check_block(const BlockParams<T>& p, std::size_t width) {
    const std::size_t D = width;
    const std::size_t H = p.w1.rank() == 2 ? p.w1.dim(1) : 0;
    require_shape(p.ln1_gamma.shape(), {D}, "block ln1.gamma");
    require_shape(p.ln1_beta.shape(), {D}, "block ln1.beta");
    require_shape(p.wq.shape(), {D, D}, "block attn.wq");
    require_shape(p.wk.shape(), {D, D}, "block attn.wk");
    require_shape(p.wv.shape(), {D, D}, "block attn.wv");
    require_shape(p.bq.shape(), {D}, "block attn.bq");
    require_shape(p.bk.shape(), {D}, "block attn.bk");
    require_shape(p.bv.shape(), {D}, "block attn.bv");
    require_shape(p.wo.shape(), {D, D}, "block attn.wo");
    require_shape(p.bo.shape(), {D}, "block attn.bo");
    require_shape(p.ln2_gamma.shape(), {D}, "block ln2.gamma");
    require_shape(p.ln2_beta.shape(), {D}, "block ln2.beta");
    require_shape(p.w1.shape(), {D, H}, "block ffn.w1");
    require_shape(p.b1.shape(), {H}, "block ffn.b1");
    require_shape(p.w2.shape(), {H, D}, "block ffn.w2");
    require_shape(p.b2.shape(), {D}, "block ffn.b2");
    return H;
}

template <typename T>
AttentionVars<T> self_attention(Var<T> x, const BlockParams<T>& p, BlockParams<T>* g, std::size_t heads) {
    auto& t = *x.tape;
    using P = BlockParams<T>;
    const std::size_t D = x.value().cols();
    if (heads == 0 || D % heads != 0) {
        throw ConfigError("self_attention: width " + std::to_string(D) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    check_block(p, D);
    auto q = ad::linear(x, bind(t, p, g, &P::wq), bind(t, p, g, &P::bq));
    auto k = ad::linear(x, bind(t, p, g, &P::wk), bind(t, p, g, &P::bk));
    auto v = ad::linear(x, bind(t, p, g, &P::wv), bind(t, p, g, &P::bv));
    const T scale = T(1) / std::sqrt(static_cast<T>(D / heads));
    auto attn = ad::attention_probs(q, k, heads, scale);
    auto mixed = ad::attention_mix(attn, v, heads);
    auto out = ad::linear(mixed, bind(t, p, g, &P::wo), bind(t, p, g, &P::bo));
    return {out, attn, out};
}

template <typename T>
AttentionVars<T> transformer_block(Var<T> x, const BlockParams<T>& p, BlockParams<T>* g, std::size_t heads) {
    auto& t = *x.tape;
    using P = BlockParams<T>;
    const T eps = static_cast<T>(kLayerNormEps);
    auto h1 = ad::layer_norm_rows(x, bind(t, p, g, &P::ln1_gamma), bind(t, p, g, &P::ln1_beta), eps);
    auto sa = self_attention(h1, p, g, heads);
    auto x1 = ad::add(x, sa.output);
    auto h2 = ad::layer_norm_rows(x1, bind(t, p, g, &P::ln2_gamma), bind(t, p, g, &P::ln2_beta), eps);
    auto f = ad::gelu(ad::linear(h2, bind(t, p, g, &P::w1), bind(t, p, g, &P::b1)));
    f = ad::linear(f, bind(t, p, g, &P::w2), bind(t, p, g, &P::b2));
    return {ad::add(x1, f), sa.attn, sa.output};
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(0) || b.dim(0) != w.dim(1)) {
        throw DimensionError("linear: incompatible shapes x" + shape_str(x.shape()) + " W" +
                             shape_str(w.shape()) + " b" + shape_str(b.shape()));
    }
    Tape<T> t;
    return ad::linear(t.constant_ref(x), t.constant_ref(w), t.constant_ref(b)).value();
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank()) throw DimensionError("softmax: axis out of range");
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t n = s[axis];
    Tensor<T> y(s);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            auto at = [&](std::size_t j) { return (o * n + j) * inner + in; };
            T mx = x[at(0)];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[at(j)]);
            T z = 0;
            for (std::size_t j = 0; j < n; ++j) {
                y[at(j)] = std::exp(x[at(j)] - mx);
                z += y[at(j)];
            }
            for (std::size_t j = 0; j < n; ++j) y[at(j)] /= z;
        }
    return y;
}

template <typename T>
AttentionOutput<T> self_attention(const Tensor<T>& x, const BlockParams<T>& p, std::size_t heads) {
    if (x.rank() != 2) throw DimensionError("self_attention: expected (N, D) tokens");
    Tape<T> t;
    auto r = self_attention(t.constant_ref(x), p, static_cast<BlockParams<T>*>(nullptr), heads);
    return {r.output.value(), r.attn.value()};
}

template <typename T>
std::pair<Tensor<T>, AttentionOutput<T>> transformer_block(const Tensor<T>& x, const BlockParams<T>& p,
                                                           std::size_t heads) {
    if (x.rank() != 2) throw DimensionError("transformer_block: expected (N, D) tokens");
    Tape<T> t;
    auto out = transformer_block(t.constant_ref(x), p, static_cast<BlockParams<T>*>(nullptr), heads);
    return {out.output.value(), AttentionOutput<T>{out.attn_output.value(), out.attn.value()}};
}

GradCheckReport grad_check(const ScalarFn& f, std::span<const double> theta, double h, double abs_floor,
                           std::span<const std::size_t> coords) {
    GradCheckReport rep;
    std::vector<double> x(theta.begin(), theta.end());
    std::vector<double> grad(x.size(), 0.0);
    const double f0 = f(x, grad);
    if (!std::isfinite(f0)) {
        rep.ok = false;
        rep.message = "objective is not finite at theta";
        return rep;
    }
    std::vector<std::size_t> all;
    if (coords.empty()) {
        all.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) all[i] = i;
        coords = all;
    }
    for (auto i : coords) {
        if (i >= x.size()) throw DimensionError("grad_check: coordinate out of range");
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x, {});
        x[i] = orig - h;
        const double fm = f(x, {});
        x[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double analytic = grad[i];
        if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(analytic)) {
            rep.ok = false;
            rep.worst_index = i;
            rep.message = "non-finite value at coordinate " + std::to_string(i);
            return rep;
        }
        const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
        const double rel = std::abs(analytic - numeric) / denom;
        ++rep.checked;
        if (rel > rep.max_rel_error || rep.checked == 1) {
            rep.max_rel_error = rel;
            rep.worst_index = i;
            rep.analytic = analytic;
            rep.numeric = numeric;
        }
    }
    return rep;
}

#define I2P_INSTANTIATE(T)                                                                               \
    template Tensor<T> init_uniform<T>(Shape, std::size_t, Rng&);                                        \
    template BlockParams<T> init_block<T>(std::size_t, std::size_t, Rng&);                               \
    template std::size_t check_block<T>(const BlockParams<T>&, std::size_t);                             \
    template AttentionVars<T> self_attention<T>(Var<T>, const BlockParams<T>&, BlockParams<T>*, std::size_t); \
    template AttentionVars<T> transformer_block<T>(Var<T>, const BlockParams<T>&, BlockParams<T>*,       \
                                                   std::size_t);                                         \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
    template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                                        \
    template AttentionOutput<T> self_attention<T>(const Tensor<T>&, const BlockParams<T>&, std::size_t); \
    template std::pair<Tensor<T>, AttentionOutput<T>> transformer_block<T>(const Tensor<T>&,             \
                                                                           const BlockParams<T>&, std::size_t);

I2P_INSTANTIATE(float)
I2P_INSTANTIATE(double)

#undef I2P_INSTANTIATE

}  // namespace i2p::nn
