#include "i2p/aggregation.hpp"

#include <cmath>
#include <random>

namespace i2p::aggregation {

namespace {
constexpr double kNormEps = 1e-12;
}

std::string to_string(Modality m) { return m == Modality::Image ? "image" : "cloud"; }

Modality parse_modality(const std::string& s) {
    if (s == "image") return Modality::Image;
    if (s == "cloud") return Modality::Cloud;
    throw ConfigError("unknown modality '" + s + "'");
}

template <typename T>
VladParams<T> init_vlad(std::size_t dim, std::size_t clusters, std::size_t output_dim, nn::Rng& rng) {
    if (dim == 0 || clusters == 0 || output_dim == 0) throw ConfigError("vlad: dimensions must be positive");
    VladParams<T> p;
    p.centers = Tensor<T>(Shape{clusters, dim});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < clusters; ++k) {
        std::vector<double> v(dim);
        double n2 = 0;
        do {
            n2 = 0;
            for (auto& x : v) {
                x = normal(rng);
                n2 += x * x;
            }
        } while (n2 == 0.0);
        const double inv = 1.0 / std::sqrt(n2);
        for (std::size_t j = 0; j < dim; ++j) p.centers.at(k, j) = static_cast<T>(v[j] * inv);
    }
    p.assign_w = nn::init_uniform<T>({clusters, dim}, dim, rng);
    p.assign_b = Tensor<T>(Shape{clusters});
    p.proj_w = nn::init_uniform<T>({dim * clusters, output_dim}, dim * clusters, rng);
    return p;
}

template <typename T>
Var<T> soft_assign(Var<T> f, const VladParams<T>& p, VladParams<T>* g) {
    auto& t = *f.tape;
    using P = VladParams<T>;
    if (f.value().rank() != 2 || f.value().cols() != p.dim())
        throw DimensionError("soft_assign: features " + shape_str(f.value().shape()) + " vs centers " +
                             shape_str(p.centers.shape()));
    auto logits = ad::matmul(f, nn::bind(t, p, g, &P::assign_w), kernels::Trans::N, kernels::Trans::T);
    return ad::softmax_rows(ad::add_row(logits, nn::bind(t, p, g, &P::assign_b)));
}

template <typename T>
Var<T> vlad(Var<T> f, Var<T> assign, Var<T> saliency, Var<T> centers) {
    const auto& F = f.value();
    const auto& A = assign.value();
    const auto& S = saliency.value();
    const auto& C = centers.value();
    if (F.rank() != 2 || C.rank() != 2 || F.cols() != C.cols())
        throw DimensionError("vlad: features and centers disagree on width");
    const std::size_t N = F.rows(), D = F.cols(), K = C.rows();
    require_shape(A.shape(), Shape{N, K}, "vlad assignments");
    if (S.size() != N)
        throw SaliencyError("vlad: saliency length " + std::to_string(S.size()) + " for " + std::to_string(N) +
                            " tokens");

    Tensor<T> V(Shape{D, K});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t k = 0; k < K; ++k) {
            const T w = S[i] * A[i * K + k];
            for (std::size_t j = 0; j < D; ++j) V[j * K + k] += w * (F[i * D + j] - C[k * D + j]);
        }

    auto& t = *f.tape;
    const std::size_t out = t.size(), i_f = f.id, i_a = assign.id, i_s = saliency.id, i_c = centers.id;
    const bool need = t.needs_grad(f) || t.needs_grad(assign) || t.needs_grad(saliency) || t.needs_grad(centers);
    return t.push(std::move(V), need, [=](Tape<T>& tp) {
        const auto& G = tp.grad(out);
        const auto& Fv = tp.value(i_f);
        const auto& Av = tp.value(i_a);
        const auto& Sv = tp.value(i_s);
        const auto& Cv = tp.value(i_c);
        const bool gf = tp.needs_grad(i_f), ga = tp.needs_grad(i_a), gs = tp.needs_grad(i_s),
                   gc = tp.needs_grad(i_c);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t k = 0; k < K; ++k) {
                const T w = Sv[i] * Av[i * K + k];
                if (gf) {
                    auto& dF = tp.grad(i_f);
                    for (std::size_t j = 0; j < D; ++j) dF[i * D + j] += w * G[j * K + k];
                }
                if (gc) {
                    auto& dC = tp.grad(i_c);
                    for (std::size_t j = 0; j < D; ++j) dC[k * D + j] -= w * G[j * K + k];
                }
                if (ga || gs) {
                    T dw = 0;
                    for (std::size_t j = 0; j < D; ++j) dw += G[j * K + k] * (Fv[i * D + j] - Cv[k * D + j]);
                    if (ga) tp.grad(i_a)[i * K + k] += Sv[i] * dw;
                    if (gs) tp.grad(i_s)[i] += Av[i * K + k] * dw;
                }
            }
    });
}

template <typename T>
Var<T> project_global(Var<T> v, const VladParams<T>& p, VladParams<T>* g, bool intra_normalize) {
    auto& t = *v.tape;
    using P = VladParams<T>;
    const std::size_t D = p.dim(), K = p.clusters();
    require_shape(v.value().shape(), Shape{D, K}, "project_global input");
    require_shape(p.proj_w.shape(), Shape{D * K, p.output_dim()}, "project_global weights");
    if (intra_normalize) v = ad::l2_normalize(v, ad::Axis::Cols, static_cast<T>(kNormEps));
    auto flat = ad::reshape(v, Shape{1, D * K});
    auto y = ad::matmul(flat, nn::bind(t, p, g, &P::proj_w));
    double n2 = 0;
    for (auto x : y.value().vec()) n2 += static_cast<double>(x) * x;
    if (!(std::sqrt(n2) > kNormEps)) throw NumericError("project_global: degenerate (zero) feature vector");
    return ad::l2_normalize(y, ad::Axis::Rows, static_cast<T>(kNormEps));
}

template <typename T>
Var<T> aggregate(Var<T> tokens, Var<T> saliency, const VladParams<T>& p, VladParams<T>* g,
                 const AggregationConfig& cfg) {
    auto& t = *tokens.tape;
    using P = VladParams<T>;
    auto a = soft_assign(tokens, p, g);
    auto s = cfg.use_saliency ? saliency : t.constant(Tensor<T>(Shape{tokens.value().rows()}, T(1)));
    auto v = vlad(tokens, a, s, nn::bind(t, p, g, &P::centers));
    return project_global(v, p, g, cfg.intra_normalize);
}

// ---------------------------------------------------------------------------

Tensor<float> soft_assign(const Tensor<float>& f, const VladParams<float>& p) {
    Tape<float> t;
    return soft_assign(t.constant_ref(f), p, static_cast<VladParams<float>*>(nullptr)).value();
}

Tensor<float> saliency_netvlad(const Tensor<float>& f, std::span<const float> saliency, const VladParams<float>& p) {
    Tape<float> t;
    auto x = t.constant_ref(f);
    auto a = soft_assign(x, p, static_cast<VladParams<float>*>(nullptr));
    auto s = t.constant(Tensor<float>(Shape{saliency.size()}, std::vector<float>(saliency.begin(), saliency.end())));
    return vlad(x, a, s, t.constant_ref(p.centers)).value();
}

Tensor<float> netvlad(const Tensor<float>& f, const VladParams<float>& p) {
    const std::vector<float> ones(f.rank() == 2 ? f.rows() : 0, 1.0f);
    return saliency_netvlad(f, ones, p);
}

std::vector<float> project_global(const Tensor<float>& v, const VladParams<float>& p, bool intra_normalize) {
    Tape<float> t;
    return project_global(t.constant_ref(v), p, static_cast<VladParams<float>*>(nullptr), intra_normalize)
        .value()
        .vec();
}

GlobalFeature global_feature(const encoders::LocalFeatures& lf, const VladParams<float>& p,
                             const AggregationConfig& cfg, Modality modality, std::uint64_t id) {
    Tape<float> t;
    auto tokens = t.constant_ref(lf.tokens);
    auto s = t.constant(Tensor<float>(Shape{lf.saliency.size()}, lf.saliency));
    auto y = aggregate(tokens, s, p, static_cast<VladParams<float>*>(nullptr), cfg);
    return {y.value().vec(), modality, id};
}

#define I2P_INSTANTIATE(T)                                                                        \
    template VladParams<T> init_vlad<T>(std::size_t, std::size_t, std::size_t, nn::Rng&);         \
    template Var<T> soft_assign<T>(Var<T>, const VladParams<T>&, VladParams<T>*);                 \
    template Var<T> vlad<T>(Var<T>, Var<T>, Var<T>, Var<T>);                                      \
    template Var<T> project_global<T>(Var<T>, const VladParams<T>&, VladParams<T>*, bool);        \
    template Var<T> aggregate<T>(Var<T>, Var<T>, const VladParams<T>&, VladParams<T>*, const AggregationConfig&);

I2P_INSTANTIATE(float)
I2P_INSTANTIATE(double)

#undef I2P_INSTANTIATE

}  // namespace i2p::aggregation
