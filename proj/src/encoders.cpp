#include "i2p/encoders.hpp"

#include <cmath>
#include <string>

#include "i2p/errors.hpp"

namespace i2p::encoders {

SaliencyMode parse_saliency_mode(const std::string& s) {
    if (s == "class_row") return SaliencyMode::ClassRow;
    if (s == "received_mean") return SaliencyMode::ReceivedMean;
    throw ConfigError("unknown saliency mode '" + s + "'");
}

std::string to_string(SaliencyMode m) { return m == SaliencyMode::ClassRow ? "class_row" : "received_mean"; }

std::size_t EncoderConfig::image_patches() const {
    return (image_height / patch_size) * (image_width / patch_size);
}

void EncoderConfig::validate() const {
    if (patch_size == 0 || image_height % patch_size != 0 || image_width % patch_size != 0 || image_height == 0 ||
        image_width == 0) {
        throw ConfigError("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                          " is not divisible into " + std::to_string(patch_size) + "-pixel patches");
    }
    if (image_channels == 0) throw ConfigError("image_channels must be >= 1");
    if (image_heads == 0 || image_dim % image_heads != 0)
        throw ConfigError("image_dim must be divisible by image_heads");
    if (cloud_heads == 0 || cloud_dim % cloud_heads != 0)
        throw ConfigError("cloud_dim must be divisible by cloud_heads");
    if (cloud_tokens == 0 || neighbors == 0) throw ConfigError("cloud_tokens and neighbors must be positive");
    if (tokenizer_channels.empty()) throw ConfigError("tokenizer_channels must not be empty");
    if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
    if (image_saliency == SaliencyMode::ClassRow && !use_class_token_image)
        throw ConfigError("class_row saliency needs the image class token");
    if (cloud_saliency == SaliencyMode::ClassRow && !use_class_token_cloud)
        throw ConfigError("class_row saliency needs the cloud class token");
    if (!(cloud_scale_m > 0.0)) throw ConfigError("cloud_scale_m must be positive");
}

template <typename T>
ImageEncoderParams<T> init_image_encoder(const EncoderConfig& cfg, nn::Rng& rng) {
    cfg.validate();
    const std::size_t D = cfg.image_dim, Din = cfg.patch_dim();
    const std::size_t ntok = cfg.image_patches() + (cfg.use_class_token_image ? 1 : 0);
    ImageEncoderParams<T> p;
    p.patch_w = nn::init_uniform<T>({Din, D}, Din, rng);
    p.patch_b = Tensor<T>(Shape{D});
    if (cfg.use_class_token_image) p.class_token = nn::init_uniform<T>({1, D}, D, rng);
    p.pos_embed = nn::init_uniform<T>({ntok, D}, D, rng);
    for (std::size_t i = 0; i < cfg.blocks; ++i) p.blocks.push_back(nn::init_block<T>(D, D * cfg.mlp_ratio, rng));
    p.norm_gamma = Tensor<T>(Shape{D}, T(1));
    p.norm_beta = Tensor<T>(Shape{D});
    return p;
}

template <typename T>
CloudEncoderParams<T> init_cloud_encoder(const EncoderConfig& cfg, nn::Rng& rng) {
    cfg.validate();
    const std::size_t D = cfg.cloud_dim;
    CloudEncoderParams<T> p;
    std::size_t in = 3;
    for (auto w : cfg.tokenizer_channels) {
        p.mlp_w.push_back(nn::init_uniform<T>({in, w}, in, rng));
        p.mlp_b.push_back(Tensor<T>(Shape{w}));
        in = w;
    }
    p.proj_w = nn::init_uniform<T>({in, D}, in, rng);
    p.proj_b = Tensor<T>(Shape{D});
    p.pos_w1 = nn::init_uniform<T>({3, D}, 3, rng);
    p.pos_b1 = Tensor<T>(Shape{D});
    p.pos_w2 = nn::init_uniform<T>({D, D}, D, rng);
    p.pos_b2 = Tensor<T>(Shape{D});
    if (cfg.use_class_token_cloud) p.class_token = nn::init_uniform<T>({1, D}, D, rng);
    for (std::size_t i = 0; i < cfg.blocks; ++i) p.blocks.push_back(nn::init_block<T>(D, D * cfg.mlp_ratio, rng));
    p.norm_gamma = Tensor<T>(Shape{D}, T(1));
    p.norm_beta = Tensor<T>(Shape{D});
    return p;
}

Tensor<float> patchify_image(const ImageSample& img, std::size_t P) {
    if (P == 0 || img.height % P != 0 || img.width % P != 0 || img.height == 0 || img.width == 0) {
        throw ConfigError("patchify: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                          " not divisible by patch size " + std::to_string(P));
    }
    if (img.channels == 0 || img.pixels.size() != img.height * img.width * img.channels)
        throw DataError("patchify: pixel buffer does not match image dimensions");
    const std::size_t C = img.channels;
    const std::size_t gw = img.width / P, gh = img.height / P;
    Tensor<float> out(Shape{gh * gw, P * P * C});
    for (std::size_t pr = 0; pr < gh; ++pr)
        for (std::size_t pc = 0; pc < gw; ++pc) {
            float* row = out.data() + (pr * gw + pc) * P * P * C;
            for (std::size_t y = 0; y < P; ++y)
                for (std::size_t x = 0; x < P; ++x)
                    for (std::size_t c = 0; c < C; ++c) *row++ = img.at(pr * P + y, pc * P + x, c);
        }
    return out;
}

CloudPatches cloud_patches_from(const pointops::PatchSet& ps, double scale_m) {
    CloudPatches out;
    const float inv = static_cast<float>(1.0 / scale_m);
    out.centers = Tensor<float>(Shape{ps.count, 3});
    out.neighborhoods = Tensor<float>(Shape{ps.count * ps.k, 3});
    for (std::size_t i = 0; i < ps.centers.size(); ++i) out.centers[i] = ps.centers[i] * inv;
    for (std::size_t i = 0; i < ps.neighborhoods.size(); ++i) out.neighborhoods[i] = ps.neighborhoods[i] * inv;
    return out;
}

CloudPatches make_cloud_patches(const pointops::PointCloud& pc, const EncoderConfig& cfg, std::uint64_t seed) {
    if (pc.empty()) throw DataError("encode_cloud: empty point cloud");
    bool padded = false;
    const auto idx = pointops::fps_padded(pc, cfg.cloud_tokens, seed, padded);
    std::vector<float> centers;
    centers.reserve(idx.size() * 3);
    for (auto i : idx)
        for (std::size_t c = 0; c < 3; ++c) centers.push_back(pc.xyz[3 * i + c]);
    const std::size_t k = std::min(cfg.neighbors, pc.size());
    if (k < cfg.neighbors) padded = true;
    auto nn_idx = pointops::knn(pc, centers, k);
    if (k < cfg.neighbors) {
        // Undersized cloud: repeat the farthest neighbor to keep k entries per patch.
        pointops::IndexMatrix full;
        full.rows = nn_idx.rows;
        full.k = cfg.neighbors;
        full.index.resize(full.rows * full.k);
        for (std::size_t r = 0; r < full.rows; ++r)
            for (std::size_t j = 0; j < full.k; ++j) full.index[r * full.k + j] = nn_idx.at(r, std::min(j, k - 1));
        nn_idx = std::move(full);
    }
    auto ps = pointops::group_normalize(pc, centers, nn_idx);
    auto out = cloud_patches_from(ps, cfg.cloud_scale_m);
    out.padded = padded;
    return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> saliency_from_attention(Var<T> attn, SaliencyMode mode, bool has_class_token) {
    const auto& A = attn.value();
    if (A.rank() != 3 || A.dim(1) != A.dim(2)) throw DimensionError("saliency: attention must be (heads, N, N)");
    if (mode == SaliencyMode::ClassRow && !has_class_token)
        throw ConfigError("saliency: class_row mode needs a class token");
    const std::size_t H = A.dim(0), Ntok = A.dim(1);
    const std::size_t first = has_class_token ? 1 : 0;
    if (Ntok <= first) throw DimensionError("saliency: no patch tokens");
    const std::size_t N = Ntok - first;
    // Queries averaged over: the class row only, or every token.
    const std::size_t q0 = 0, q1 = mode == SaliencyMode::ClassRow ? 1 : Ntok;
    const T inv = T(1) / static_cast<T>(H * (q1 - q0));
    std::vector<T> raw(N, T(0));
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = q0; i < q1; ++i) {
            const T* row = A.data() + (h * Ntok + i) * Ntok;
            for (std::size_t j = 0; j < N; ++j) raw[j] += row[first + j];
        }
    T total = 0;
    for (auto& r : raw) {
        r *= inv;
        total += r;
    }
    Tensor<T> s(Shape{N});
    const bool degenerate = !(total > T(0));
    for (std::size_t j = 0; j < N; ++j) s[j] = degenerate ? T(1) : raw[j] * static_cast<T>(N) / total;

    auto& t = *attn.tape;
    const std::size_t out = t.size(), ia = attn.id;
    return t.push(std::move(s), t.needs_grad(attn) && !degenerate, [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        const auto& S = tp.value(out);
        auto& ga = tp.grad(ia);
        // s = N r / sum(r): dr_l = (N / sum r) (g_l - <g, s> / N)
        T gs = 0;
        for (std::size_t j = 0; j < N; ++j) gs += g[j] * S[j];
        const T k = static_cast<T>(N) / total;
        for (std::size_t j = 0; j < N; ++j) {
            const T dr = k * (g[j] - gs / static_cast<T>(N)) * inv;
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t i = q0; i < q1; ++i) ga[(h * Ntok + i) * Ntok + first + j] += dr;
        }
    });
}

template <typename T>
Var<T> image_tokens(Var<T> patches, const ImageEncoderParams<T>& p, ImageEncoderParams<T>* g) {
    auto& t = *patches.tape;
    using P = ImageEncoderParams<T>;
    auto x = ad::linear(patches, nn::bind(t, p, g, &P::patch_w), nn::bind(t, p, g, &P::patch_b));
    if (!p.class_token.empty()) x = ad::concat_rows(nn::bind(t, p, g, &P::class_token), x);
    return ad::add(x, nn::bind(t, p, g, &P::pos_embed));
}

template <typename T>
Var<T> tokenize_3d(Var<T> neighborhoods, std::size_t k, const CloudEncoderParams<T>& p, CloudEncoderParams<T>* g) {
    auto& t = *neighborhoods.tape;
    Var<T> h = neighborhoods;
    for (std::size_t i = 0; i < p.mlp_w.size(); ++i) {
        auto w = g ? t.param(p.mlp_w[i], &g->mlp_w[i]) : t.constant_ref(p.mlp_w[i]);
        auto b = g ? t.param(p.mlp_b[i], &g->mlp_b[i]) : t.constant_ref(p.mlp_b[i]);
        h = ad::relu(ad::linear(h, w, b));
    }
    auto pooled = ad::segment_max_rows(h, k);
    using P = CloudEncoderParams<T>;
    return ad::linear(pooled, nn::bind(t, p, g, &P::proj_w), nn::bind(t, p, g, &P::proj_b));
}

template <typename T>
TowerOutput<T> encode_image(Var<T> patches, const ImageEncoderParams<T>& p, ImageEncoderParams<T>* g,
                            const EncoderConfig& cfg) {
    auto& t = *patches.tape;
    const bool cls = !p.class_token.empty();
    auto x = image_tokens(patches, p, g);
    Var<T> attn{};
    bool have_attn = false;
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        auto* gb = (g && l >= cfg.frozen_image_blocks) ? &g->blocks[l] : nullptr;
        auto r = nn::transformer_block(x, p.blocks[l], gb, cfg.image_heads);
        x = r.output;
        attn = r.attn;
        have_attn = true;
    }
    using P = ImageEncoderParams<T>;
    x = ad::layer_norm_rows(x, nn::bind(t, p, g, &P::norm_gamma), nn::bind(t, p, g, &P::norm_beta),
                          static_cast<T>(nn::kLayerNormEps));
    const std::size_t ntok = x.value().rows();
    const std::size_t first = cls ? 1 : 0;
    TowerOutput<T> out;
    out.tokens = cls ? ad::slice_rows(x, first, ntok) : x;
    out.saliency = have_attn ? saliency_from_attention(attn, cfg.image_saliency, cls)
                             : t.constant(Tensor<T>(Shape{ntok - first}, T(1)));
    return out;
}

template <typename T>
TowerOutput<T> encode_cloud(Var<T> centers, Var<T> neighborhoods, const CloudEncoderParams<T>& p,
                            CloudEncoderParams<T>* g, const EncoderConfig& cfg) {
    auto& t = *centers.tape;
    using P = CloudEncoderParams<T>;
    const std::size_t n = centers.value().rows();
    if (n == 0 || neighborhoods.value().rows() % n != 0)
        throw DimensionError("encode_cloud: neighborhoods do not match center count");
    const std::size_t k = neighborhoods.value().rows() / n;
    auto x = tokenize_3d(neighborhoods, k, p, g);
    auto pos = ad::linear(centers, nn::bind(t, p, g, &P::pos_w1), nn::bind(t, p, g, &P::pos_b1));
    pos = ad::linear(ad::gelu(pos), nn::bind(t, p, g, &P::pos_w2), nn::bind(t, p, g, &P::pos_b2));
    const bool cls = !p.class_token.empty();
    if (cls) {
        x = ad::concat_rows(nn::bind(t, p, g, &P::class_token), x);
        pos = ad::concat_rows(t.constant(Tensor<T>(Shape{1, pos.value().cols()})), pos);
    }
    Var<T> attn{};
    bool have_attn = false;
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        auto* gb = (g && l >= cfg.frozen_cloud_blocks) ? &g->blocks[l] : nullptr;
        x = ad::add(x, pos);
        auto r = nn::transformer_block(x, p.blocks[l], gb, cfg.cloud_heads);
        x = r.output;
        attn = r.attn;
        have_attn = true;
    }
    x = ad::layer_norm_rows(x, nn::bind(t, p, g, &P::norm_gamma), nn::bind(t, p, g, &P::norm_beta),
                          static_cast<T>(nn::kLayerNormEps));
    const std::size_t ntok = x.value().rows();
    TowerOutput<T> out;
    out.tokens = cls ? ad::slice_rows(x, 1, ntok) : x;
    out.saliency = have_attn ? saliency_from_attention(attn, cfg.cloud_saliency, cls)
                             : t.constant(Tensor<T>(Shape{n}, T(1)));
    return out;
}

// ---------------------------------------------------------------------------

std::vector<float> saliency_from_attention(const Tensor<float>& attn, SaliencyMode mode, bool has_class_token) {
    Tape<float> t;
    return saliency_from_attention(t.constant_ref(attn), mode, has_class_token).value().vec();
}

LocalFeatures encode_image(const ImageSample& img, const ImageEncoderParams<float>& p, const EncoderConfig& cfg) {
    Tape<float> t;
    auto patches = t.constant(patchify_image(img, cfg.patch_size));
    auto r = encode_image(patches, p, static_cast<ImageEncoderParams<float>*>(nullptr), cfg);
    return {r.tokens.value(), r.saliency.value().vec()};
}

LocalFeatures encode_cloud(const CloudPatches& patches, const CloudEncoderParams<float>& p,
                           const EncoderConfig& cfg) {
    Tape<float> t;
    auto r = encode_cloud(t.constant_ref(patches.centers), t.constant_ref(patches.neighborhoods), p,
                          static_cast<CloudEncoderParams<float>*>(nullptr), cfg);
    return {r.tokens.value(), r.saliency.value().vec()};
}

#define I2P_INSTANTIATE(T)                                                                                 \
    template ImageEncoderParams<T> init_image_encoder<T>(const EncoderConfig&, nn::Rng&);                  \
    template CloudEncoderParams<T> init_cloud_encoder<T>(const EncoderConfig&, nn::Rng&);                  \
    template Var<T> saliency_from_attention<T>(Var<T>, SaliencyMode, bool);                                \
    template Var<T> image_tokens<T>(Var<T>, const ImageEncoderParams<T>&, ImageEncoderParams<T>*);         \
    template Var<T> tokenize_3d<T>(Var<T>, std::size_t, const CloudEncoderParams<T>&, CloudEncoderParams<T>*); \
    template TowerOutput<T> encode_image<T>(Var<T>, const ImageEncoderParams<T>&, ImageEncoderParams<T>*,  \
                                            const EncoderConfig&);                                         \
    template TowerOutput<T> encode_cloud<T>(Var<T>, Var<T>, const CloudEncoderParams<T>&,                  \
                                            CloudEncoderParams<T>*, const EncoderConfig&);

I2P_INSTANTIATE(float)
I2P_INSTANTIATE(double)

#undef I2P_INSTANTIATE

}  // namespace i2p::encoders
