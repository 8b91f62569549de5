#pragma once

#include <string>

#include "i2p/autograd.hpp"
#include "i2p/tensor.hpp"

namespace i2p::losses {

using ad::Var;

enum class RelationMetric { Dot, EuclideanDistance };

RelationMetric parse_relation_metric(const std::string& s);
std::string to_string(RelationMetric m);

struct LossConfig {
    double temperature = 0.07;
    double lambda = 1.0;  // Euclidean relation weight
    double beta = 2.0;    // hyperbolic relation weight
    double curvature = 1.0;
    RelationMetric metric = RelationMetric::Dot;
    bool symmetric_infonce = false;

    // Throws ConfigError.
    void validate() const;
};

// Row i of f2d (images) pairs with row i of f3d (clouds); rows unit norm.
struct BatchFeatures {
    Tensor<double> f2d;  // (B, D_g)
    Tensor<double> f3d;  // (B, D_g)

    std::size_t batch() const { return f2d.rank() == 2 ? f2d.rows() : 0; }
    void validate() const;
};

struct LossBreakdown {
    double total = 0;
    double infonce = 0;
    double relation_euc = 0;
    double relation_hyp = 0;
    double fused = 0;  // lambda * euc + beta * hyp
};

// Tape-level --------------------------------------------------------------------

template <typename T>
struct LossVars {
    Var<T> total, infonce, relation_euc, relation_hyp, fused;
};

// mean_i [logsumexp_j logits_ij - logits_ii] for a square logit matrix.
template <typename T>
Var<T> diag_cross_entropy(Var<T> logits);

template <typename T>
Var<T> infonce(Var<T> f2d, Var<T> f3d, T temperature, bool symmetric = false);

// Mean over pairs i < j of (r(a_i, a_j) - r(b_i, b_j))^2; zero for B < 2.
template <typename T>
Var<T> relation_consistency(Var<T> a, Var<T> b, RelationMetric metric);

// Same with r = hyperbolic distance between exp_0 images.
template <typename T>
Var<T> hyperbolic_relation_consistency(Var<T> a, Var<T> b, T c);

template <typename T>
LossVars<T> total_loss(Var<T> f2d, Var<T> f3d, const LossConfig& cfg);

// Value-level -------------------------------------------------------------------

double infonce(const BatchFeatures& bf, double temperature, bool symmetric = false);
double relation_consistency(const BatchFeatures& bf, RelationMetric metric = RelationMetric::Dot);
double hyperbolic_relation_consistency(const BatchFeatures& bf, double c);
double fused_relation(const BatchFeatures& bf, const LossConfig& cfg);
LossBreakdown total_loss(const BatchFeatures& bf, const LossConfig& cfg);

}  // namespace i2p::losses
