#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "i2p/autograd.hpp"
#include "i2p/nn.hpp"
#include "i2p/pointops.hpp"
#include "i2p/tensor.hpp"

namespace i2p::encoders {

using ad::Tape;
using ad::Var;

// Channel-last image with values in [0, 1].
struct ImageSample {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<float> pixels;  // height x width x channels

    float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

enum class SaliencyMode {
    ClassRow,      // head-mean attention of the class-token query over patch keys
    ReceivedMean,  // head- and query-mean attention received by each patch token
};

SaliencyMode parse_saliency_mode(const std::string& s);
std::string to_string(SaliencyMode m);

struct EncoderConfig {
    std::size_t image_height = 512;
    std::size_t image_width = 1024;
    std::size_t image_channels = 3;
    std::size_t patch_size = 16;
    std::size_t blocks = 12;
    std::size_t image_heads = 6;
    std::size_t cloud_heads = 3;
    std::size_t image_dim = 384;
    std::size_t cloud_dim = 384;
    std::size_t cloud_tokens = 3072;
    std::size_t neighbors = 32;
    std::size_t mlp_ratio = 4;
    // Shared point MLP widths; the last entry is the pooled width projected to cloud_dim.
    std::vector<std::size_t> tokenizer_channels{128, 1024};
    bool use_class_token_image = true;
    bool use_class_token_cloud = false;
    SaliencyMode image_saliency = SaliencyMode::ClassRow;
    SaliencyMode cloud_saliency = SaliencyMode::ReceivedMean;
    // Coordinates are divided by this before tokenization (meters).
    double cloud_scale_m = 10.0;
    // Leading blocks excluded from optimization (pretrained fine-tuning setups).
    std::size_t frozen_image_blocks = 0;
    std::size_t frozen_cloud_blocks = 0;

    std::size_t image_patches() const;
    std::size_t patch_dim() const { return patch_size * patch_size * image_channels; }
    // Throws ConfigError on inconsistent settings.
    void validate() const;
};

// Patch tokens and their saliency (mean 1) for one sample of one modality.
struct LocalFeatures {
    Tensor<float> tokens;         // (N, D)
    std::vector<float> saliency;  // N entries, >= 0, mean 1
};

template <typename T>
struct ImageEncoderParams {
    Tensor<T> patch_w, patch_b;  // (P*P*C, D), (D)
    Tensor<T> class_token;       // (1, D), empty without class token
    Tensor<T> pos_embed;         // (N_2d [+1], D)
    std::vector<nn::BlockParams<T>> blocks;
    Tensor<T> norm_gamma, norm_beta;  // final LayerNorm, (D)

    template <typename F>
    void visit(F&& f) {
        f("image.patch.w", patch_w);
        f("image.patch.b", patch_b);
        if (!class_token.empty()) f("image.cls", class_token);
        f("image.pos", pos_embed);
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("image.block" + std::to_string(i) + ".", f);
        f("image.norm.gamma", norm_gamma);
        f("image.norm.beta", norm_beta);
    }
};

template <typename T>
struct CloudEncoderParams {
    std::vector<Tensor<T>> mlp_w, mlp_b;  // shared point MLP, 3 -> ... -> pooled width
    Tensor<T> proj_w, proj_b;             // pooled width -> D
    Tensor<T> pos_w1, pos_b1, pos_w2, pos_b2;  // center xyz -> D position embedding
    Tensor<T> class_token;                // (1, D), empty without class token
    std::vector<nn::BlockParams<T>> blocks;
    Tensor<T> norm_gamma, norm_beta;      // final LayerNorm, (D)

    template <typename F>
    void visit(F&& f) {
        for (std::size_t i = 0; i < mlp_w.size(); ++i) {
            f("cloud.tok.mlp" + std::to_string(i) + ".w", mlp_w[i]);
            f("cloud.tok.mlp" + std::to_string(i) + ".b", mlp_b[i]);
        }
        f("cloud.tok.proj.w", proj_w);
        f("cloud.tok.proj.b", proj_b);
        f("cloud.pos.w1", pos_w1);
        f("cloud.pos.b1", pos_b1);
        f("cloud.pos.w2", pos_w2);
        f("cloud.pos.b2", pos_b2);
        if (!class_token.empty()) f("cloud.cls", class_token);
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("cloud.block" + std::to_string(i) + ".", f);
        f("cloud.norm.gamma", norm_gamma);
        f("cloud.norm.beta", norm_beta);
    }
};

template <typename T>
ImageEncoderParams<T> init_image_encoder(const EncoderConfig& cfg, nn::Rng& rng);
template <typename T>
CloudEncoderParams<T> init_cloud_encoder(const EncoderConfig& cfg, nn::Rng& rng);

// Row i is the flattened (row-major, channel-last) P x P patch i in raster order.
Tensor<float> patchify_image(const ImageSample& img, std::size_t patch_size);

// Cloud preprocessing ahead of tokenization: FPS centers, KNN, and center
// subtraction, all scaled by 1 / cloud_scale_m.
struct CloudPatches {
    Tensor<float> centers;        // (N_3d, 3)
    Tensor<float> neighborhoods;  // (N_3d * k, 3)
    bool padded = false;          // FPS sampled with replacement
};

CloudPatches make_cloud_patches(const pointops::PointCloud& pc, const EncoderConfig& cfg, std::uint64_t seed);
CloudPatches cloud_patches_from(const pointops::PatchSet& ps, double scale_m);

// Tape-level towers -----------------------------------------------------------

template <typename T>
struct TowerOutput {
    Var<T> tokens;    // (N, D) patch tokens, class token removed
    Var<T> saliency;  // (N), mean 1
};

// class token + patch projection + positional embedding.
template <typename T>
Var<T> image_tokens(Var<T> patches, const ImageEncoderParams<T>& p, ImageEncoderParams<T>* g);

// Shared point MLP, max-pool over each patch's k points, projection to D.
template <typename T>
Var<T> tokenize_3d(Var<T> neighborhoods, std::size_t k, const CloudEncoderParams<T>& p, CloudEncoderParams<T>* g);

template <typename T>
TowerOutput<T> encode_image(Var<T> patches, const ImageEncoderParams<T>& p, ImageEncoderParams<T>* g,
                            const EncoderConfig& cfg);

template <typename T>
TowerOutput<T> encode_cloud(Var<T> centers, Var<T> neighborhoods, const CloudEncoderParams<T>& p,
                            CloudEncoderParams<T>* g, const EncoderConfig& cfg);

// Saliency from the last block's attention (heads, N_tok, N_tok), rescaled to
// mean 1. `has_class_token` marks token 0 as the class token, which is excluded
// from the returned scores.
template <typename T>
Var<T> saliency_from_attention(Var<T> attn, SaliencyMode mode, bool has_class_token);

// Value-level API ---------------------------------------------------------------

std::vector<float> saliency_from_attention(const Tensor<float>& attn, SaliencyMode mode, bool has_class_token);

LocalFeatures encode_image(const ImageSample& img, const ImageEncoderParams<float>& p, const EncoderConfig& cfg);
LocalFeatures encode_cloud(const CloudPatches& patches, const CloudEncoderParams<float>& p,
                           const EncoderConfig& cfg);

}  // namespace i2p::encoders
