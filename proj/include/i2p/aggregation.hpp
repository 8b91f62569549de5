#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "i2p/autograd.hpp"
#include "i2p/encoders.hpp"
#include "i2p/errors.hpp"
#include "i2p/nn.hpp"
#include "i2p/tensor.hpp"

namespace i2p::aggregation {

using ad::Tape;
using ad::Var;

// Saliency vector whose length does not match the token count.
class SaliencyError : public DimensionError {
public:
    using DimensionError::DimensionError;
};

enum class Modality { Image, Cloud };

std::string to_string(Modality m);
Modality parse_modality(const std::string& s);

struct AggregationConfig {
    std::size_t clusters = 64;
    std::size_t output_dim = 256;
    bool intra_normalize = true;
    // false: plain NetVLAD, saliency ignored.
    bool use_saliency = true;
};

template <typename T>
struct VladParams {
    Tensor<T> centers;   // (K, D)
    Tensor<T> assign_w;  // (K, D)
    Tensor<T> assign_b;  // (K)
    Tensor<T> proj_w;    // (D*K, D_g), rows indexed j*K + k

    std::size_t clusters() const { return centers.rows(); }
    std::size_t dim() const { return centers.cols(); }
    std::size_t output_dim() const { return proj_w.cols(); }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + "centers", centers);
        f(prefix + "assign.w", assign_w);
        f(prefix + "assign.b", assign_b);
        f(prefix + "proj.w", proj_w);
    }
};

// Centers are seeded random unit vectors.
template <typename T>
VladParams<T> init_vlad(std::size_t dim, std::size_t clusters, std::size_t output_dim, nn::Rng& rng);

struct GlobalFeature {
    std::vector<float> values;  // unit norm
    Modality modality = Modality::Image;
    std::uint64_t id = 0;
};

// Tape-level ------------------------------------------------------------------

// softmax_k(w_k . f_i + b_k), (N, K).
template <typename T>
Var<T> soft_assign(Var<T> f, const VladParams<T>& p, VladParams<T>* g);

// V(j, k) = sum_i s_i a_ik (f_ij - c_kj), shape (D, K).
template <typename T>
Var<T> vlad(Var<T> f, Var<T> assign, Var<T> saliency, Var<T> centers);

// Optional per-cluster column normalization, flatten, projection, L2 norm -> (1, D_g).
// Throws NumericError when the projected vector is zero.
template <typename T>
Var<T> project_global(Var<T> v, const VladParams<T>& p, VladParams<T>* g, bool intra_normalize);

// saliency-NetVLAD (or vanilla when cfg.use_saliency is false) + projection.
template <typename T>
Var<T> aggregate(Var<T> tokens, Var<T> saliency, const VladParams<T>& p, VladParams<T>* g,
                 const AggregationConfig& cfg);

// Value-level -------------------------------------------------------------------

Tensor<float> soft_assign(const Tensor<float>& f, const VladParams<float>& p);
Tensor<float> netvlad(const Tensor<float>& f, const VladParams<float>& p);
Tensor<float> saliency_netvlad(const Tensor<float>& f, std::span<const float> saliency, const VladParams<float>& p);
std::vector<float> project_global(const Tensor<float>& v, const VladParams<float>& p, bool intra_normalize = true);
GlobalFeature global_feature(const encoders::LocalFeatures& lf, const VladParams<float>& p,
                             const AggregationConfig& cfg, Modality modality, std::uint64_t id);

}  // namespace i2p::aggregation
