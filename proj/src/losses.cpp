#include "i2p/losses.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "i2p/errors.hpp"
#include "i2p/manifold.hpp"

namespace i2p::losses {

RelationMetric parse_relation_metric(const std::string& s) {
    if (s == "dot") return RelationMetric::Dot;
    if (s == "euclidean_distance") return RelationMetric::EuclideanDistance;
    throw ConfigError("unknown relation metric '" + s + "'");
}

std::string to_string(RelationMetric m) { return m == RelationMetric::Dot ? "dot" : "euclidean_distance"; }

void LossConfig::validate() const {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (!(lambda >= 0.0) || !(beta >= 0.0)) throw ConfigError("relation weights must be non-negative");
    if (!(curvature > 0.0)) throw ConfigError("curvature must be positive");
}

void BatchFeatures::validate() const {
    if (f2d.rank() != 2 || f3d.rank() != 2 || f2d.shape() != f3d.shape())
        throw DimensionError("batch features: image and cloud matrices must share shape (B, D_g)");
    if (f2d.rows() == 0) throw DimensionError("batch features: empty batch");
}

namespace {

std::vector<std::size_t> upper_pairs_flat(std::size_t B) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = i + 1; j < B; ++j) idx.push_back(i * B + j);
    return idx;
}

void pair_rows(std::size_t B, std::vector<std::size_t>& first, std::vector<std::size_t>& second) {
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = i + 1; j < B; ++j) {
            first.push_back(i);
            second.push_back(j);
        }
}

template <typename T>
Var<T> zero(ad::Tape<T>& t) {
    return t.constant(Tensor<T>::scalar(T(0)));
}

template <typename T>
Var<T> pairwise(Var<T> x, RelationMetric metric) {
    const std::size_t B = x.value().rows();
    if (metric == RelationMetric::Dot) {
        auto gram = ad::matmul(x, x, kernels::Trans::N, kernels::Trans::T);
        return ad::gather(gram, upper_pairs_flat(B));
    }
    std::vector<std::size_t> a, b;
    pair_rows(B, a, b);
    return ad::row_norm(ad::sub(ad::gather_rows(x, a), ad::gather_rows(x, b)));
}

}  // namespace

template <typename T>
Var<T> diag_cross_entropy(Var<T> logits) {
    const auto& L = logits.value();
    if (L.rank() != 2 || L.rows() != L.cols()) throw DimensionError("diag_cross_entropy: logits must be square");
    const std::size_t B = L.rows();
    Tensor<T> P(L.shape());
    T loss = 0;
    for (std::size_t i = 0; i < B; ++i) {
        const T* row = L.data() + i * B;
        const T mx = *std::max_element(row, row + B);
        T z = 0;
        for (std::size_t j = 0; j < B; ++j) {
            P[i * B + j] = std::exp(row[j] - mx);
            z += P[i * B + j];
        }
        for (std::size_t j = 0; j < B; ++j) P[i * B + j] /= z;
        loss += mx + std::log(z) - row[i];
    }
    loss /= static_cast<T>(B);
    auto& t = *logits.tape;
    const std::size_t out = t.size(), il = logits.id;
    return t.push(Tensor<T>::scalar(loss), t.needs_grad(logits), [=, P = std::move(P)](ad::Tape<T>& tp) {
        const T g = tp.grad(out)[0] / static_cast<T>(B);
        auto& gl = tp.grad(il);
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < B; ++j) gl[i * B + j] += g * (P[i * B + j] - (i == j ? T(1) : T(0)));
    });
}

template <typename T>
Var<T> infonce(Var<T> f2d, Var<T> f3d, T temperature, bool symmetric) {
    if (!(temperature > T(0))) throw ConfigError("infonce: temperature must be positive");
    if (f2d.value().shape() != f3d.value().shape() || f2d.value().rank() != 2)
        throw DimensionError("infonce: feature matrices must share shape (B, D_g)");
    const T inv = T(1) / temperature;
    auto forward = diag_cross_entropy(ad::scale(ad::matmul(f2d, f3d, kernels::Trans::N, kernels::Trans::T), inv));
    if (!symmetric) return forward;
    auto backward = diag_cross_entropy(ad::scale(ad::matmul(f3d, f2d, kernels::Trans::N, kernels::Trans::T), inv));
    return ad::scale(ad::add(forward, backward), T(0.5));
}

template <typename T>
Var<T> relation_consistency(Var<T> a, Var<T> b, RelationMetric metric) {
    if (a.value().shape() != b.value().shape()) throw DimensionError("relation_consistency: shape mismatch");
    if (a.value().rows() < 2) return zero(*a.tape);
    auto d = ad::sub(pairwise(a, metric), pairwise(b, metric));
    return ad::mean(ad::square(d));
}

template <typename T>
Var<T> hyperbolic_relation_consistency(Var<T> a, Var<T> b, T c) {
    if (a.value().shape() != b.value().shape())
        throw DimensionError("hyperbolic_relation_consistency: shape mismatch");
    const std::size_t B = a.value().rows();
    if (B < 2) return zero(*a.tape);
    std::vector<std::size_t> first, second;
    pair_rows(B, first, second);
    auto dists = [&](Var<T> x) {
        auto h = manifold::exp_map0_rows(x, c);
        return manifold::hyp_dist_rows(ad::gather_rows(h, first), ad::gather_rows(h, second), c);
    };
    return ad::mean(ad::square(ad::sub(dists(a), dists(b))));
}

template <typename T>
LossVars<T> total_loss(Var<T> f2d, Var<T> f3d, const LossConfig& cfg) {
    cfg.validate();
    LossVars<T> v;
    v.infonce = infonce(f2d, f3d, static_cast<T>(cfg.temperature), cfg.symmetric_infonce);
    v.relation_euc = relation_consistency(f2d, f3d, cfg.metric);
    v.relation_hyp = hyperbolic_relation_consistency(f2d, f3d, static_cast<T>(cfg.curvature));
    v.fused = ad::add(ad::scale(v.relation_euc, static_cast<T>(cfg.lambda)),
                      ad::scale(v.relation_hyp, static_cast<T>(cfg.beta)));
    v.total = ad::add(v.infonce, v.fused);
    return v;
}

// ---------------------------------------------------------------------------

double infonce(const BatchFeatures& bf, double temperature, bool symmetric) {
    bf.validate();
    ad::Tape<double> t;
    return infonce(t.constant_ref(bf.f2d), t.constant_ref(bf.f3d), temperature, symmetric).value().item();
}

double relation_consistency(const BatchFeatures& bf, RelationMetric metric) {
    bf.validate();
    ad::Tape<double> t;
    return relation_consistency(t.constant_ref(bf.f2d), t.constant_ref(bf.f3d), metric).value().item();
}

double hyperbolic_relation_consistency(const BatchFeatures& bf, double c) {
    bf.validate();
    ad::Tape<double> t;
    return hyperbolic_relation_consistency(t.constant_ref(bf.f2d), t.constant_ref(bf.f3d), c).value().item();
}

double fused_relation(const BatchFeatures& bf, const LossConfig& cfg) {
    cfg.validate();
    return cfg.lambda * relation_consistency(bf, cfg.metric) + cfg.beta * hyperbolic_relation_consistency(bf, cfg.curvature);
}

LossBreakdown total_loss(const BatchFeatures& bf, const LossConfig& cfg) {
    bf.validate();
    ad::Tape<double> t;
    auto v = total_loss(t.constant_ref(bf.f2d), t.constant_ref(bf.f3d), cfg);
    return {v.total.value().item(), v.infonce.value().item(), v.relation_euc.value().item(),
            v.relation_hyp.value().item(), v.fused.value().item()};
}

#define I2P_INSTANTIATE(T)                                                          \
    template Var<T> diag_cross_entropy<T>(Var<T>);                                  \
    template Var<T> infonce<T>(Var<T>, Var<T>, T, bool);                            \
    template Var<T> relation_consistency<T>(Var<T>, Var<T>, RelationMetric);        \
    template Var<T> hyperbolic_relation_consistency<T>(Var<T>, Var<T>, T);          \
    template LossVars<T> total_loss<T>(Var<T>, Var<T>, const LossConfig&);

I2P_INSTANTIATE(float)
I2P_INSTANTIATE(double)

#undef I2P_INSTANTIATE

}  // namespace i2p::losses
