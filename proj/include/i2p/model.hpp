#pragma once

// The full dual-tower model: encoders + per-modality aggregation, and the
// batched loss with parameter gradients.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "i2p/aggregation.hpp"
#include "i2p/encoders.hpp"
#include "i2p/evaluation.hpp"
#include "i2p/io.hpp"
#include "i2p/losses.hpp"
#include "i2p/pointops.hpp"

namespace i2p::model {

using evaluation::Id;

struct ModelConfig {
    encoders::EncoderConfig encoder;
    aggregation::AggregationConfig aggregation;
    losses::LossConfig loss;
    bool ground_removal = true;
    pointops::GroundRemovalConfig ransac;
    std::uint64_t seed = 0;

    void validate() const;
};

template <typename T>
struct ModelParams {
    encoders::ImageEncoderParams<T> image;
    encoders::CloudEncoderParams<T> cloud;
    aggregation::VladParams<T> image_vlad;
    aggregation::VladParams<T> cloud_vlad;

    template <typename F>
    void visit(F&& f) {
        image.visit(f);
        cloud.visit(f);
        image_vlad.visit("agg.image.", f);
        cloud_vlad.visit("agg.cloud.", f);
    }

    std::size_t parameter_count();
};

template <typename T>
ModelParams<T> init_model(const ModelConfig& cfg);

// Same structure with every tensor zero.
template <typename T>
ModelParams<T> zeros_like(ModelParams<T> p);

template <typename T>
std::vector<T> flatten(ModelParams<T>& p);
template <typename T>
void unflatten(std::span<const T> theta, ModelParams<T>& p);

// ModelParams <-> named tensors. Loading checks names and shapes against a
// freshly initialized model of `cfg`.
std::vector<std::pair<std::string, Tensor<float>>> to_named(ModelParams<float>& p, const std::string& prefix = "");
ModelParams<float> from_named(const io::Checkpoint& ck, const ModelConfig& cfg, const std::string& prefix = "");

// Preprocessed inputs of one image/cloud pair.
struct SampleInput {
    Id id = 0;
    Tensor<float> patches;  // (N_2d, P*P*C)
    encoders::CloudPatches cloud;
};

Tensor<float> prepare_image(const encoders::ImageSample& img, const ModelConfig& cfg);
// Ground removal (when enabled) followed by FPS / KNN grouping; seeds derive from cfg.seed and id.
encoders::CloudPatches prepare_cloud(const pointops::PointCloud& pc, const ModelConfig& cfg, Id id);

// Tape-level global features, (1, D_g).
template <typename T>
ad::Var<T> image_global(ad::Tape<T>& tape, const Tensor<float>& patches, const ModelParams<T>& p, ModelParams<T>* g,
                        const ModelConfig& cfg);
template <typename T>
ad::Var<T> cloud_global(ad::Tape<T>& tape, const encoders::CloudPatches& cloud, const ModelParams<T>& p,
                        ModelParams<T>* g, const ModelConfig& cfg);

// Loss of one batch. With `grads`, the parameter gradient of the total loss
// is added into it. Samples are processed in parallel; the gradient reduction
// runs in sample order, so results do not depend on the thread count.
template <typename T>
losses::LossBreakdown batch_loss(const ModelParams<T>& p, std::span<const SampleInput* const> batch,
                                 const ModelConfig& cfg, ModelParams<T>* grads);

aggregation::GlobalFeature embed_image(const ModelParams<float>& p, const Tensor<float>& patches,
                                       const ModelConfig& cfg, Id id);
aggregation::GlobalFeature embed_cloud(const ModelParams<float>& p, const encoders::CloudPatches& cloud,
                                       const ModelConfig& cfg, Id id);

}  // namespace i2p::model
