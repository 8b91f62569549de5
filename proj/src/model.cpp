#include "i2p/model.hpp"

#include <cmath>
#include <exception>
#include <type_traits>

#include "i2p/kernels.hpp"

namespace i2p::model {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

template <typename T>
std::vector<Tensor<T>*> tensor_list(ModelParams<T>& p) {
    std::vector<Tensor<T>*> out;
    p.visit([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
    return out;
}

template <typename T>
ad::Var<T> input_var(ad::Tape<T>& t, const Tensor<float>& x) {
    if constexpr (std::is_same_v<T, float>) {
        return t.constant_ref(x);
    } else {
        return t.constant(x.cast<T>());
    }
}

// Runs body(i) for i in [0, n) in parallel and rethrows the first failure.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& body) {
    std::exception_ptr failure;
    const auto m = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
#pragma omp critical
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
}

}  // namespace

void ModelConfig::validate() const {
    encoder.validate();
    loss.validate();
    if (aggregation.clusters == 0 || aggregation.output_dim == 0)
        throw ConfigError("aggregation clusters and output_dim must be positive");
    if (encoder.frozen_image_blocks > encoder.blocks || encoder.frozen_cloud_blocks > encoder.blocks)
        throw ConfigError("more frozen blocks than blocks");
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() {
    std::size_t n = 0;
    visit([&](const std::string&, Tensor<T>& t) { n += t.size(); });
    return n;
}

template <typename T>
ModelParams<T> init_model(const ModelConfig& cfg) {
    cfg.validate();
    nn::Rng rng(cfg.seed);
    ModelParams<T> p;
    p.image = encoders::init_image_encoder<T>(cfg.encoder, rng);
    p.cloud = encoders::init_cloud_encoder<T>(cfg.encoder, rng);
    p.image_vlad = aggregation::init_vlad<T>(cfg.encoder.image_dim, cfg.aggregation.clusters,
                                             cfg.aggregation.output_dim, rng);
    p.cloud_vlad = aggregation::init_vlad<T>(cfg.encoder.cloud_dim, cfg.aggregation.clusters,
                                             cfg.aggregation.output_dim, rng);
    return p;
}

template <typename T>
ModelParams<T> zeros_like(ModelParams<T> p) {
    p.visit([](const std::string&, Tensor<T>& t) { t.fill(T(0)); });
    return p;
}

template <typename T>
std::vector<T> flatten(ModelParams<T>& p) {
    std::vector<T> out;
    p.visit([&](const std::string&, Tensor<T>& t) { out.insert(out.end(), t.vec().begin(), t.vec().end()); });
    return out;
}

template <typename T>
void unflatten(std::span<const T> theta, ModelParams<T>& p) {
    std::size_t off = 0;
    p.visit([&](const std::string&, Tensor<T>& t) {
        if (off + t.size() > theta.size()) throw DimensionError("unflatten: parameter vector too short");
        std::copy(theta.begin() + static_cast<std::ptrdiff_t>(off),
                  theta.begin() + static_cast<std::ptrdiff_t>(off + t.size()), t.vec().begin());
        off += t.size();
    });
    if (off != theta.size()) throw DimensionError("unflatten: parameter vector too long");
}

std::vector<std::pair<std::string, Tensor<float>>> to_named(ModelParams<float>& p, const std::string& prefix) {
    std::vector<std::pair<std::string, Tensor<float>>> out;
    p.visit([&](const std::string& name, Tensor<float>& t) { out.emplace_back(prefix + name, t); });
    return out;
}

ModelParams<float> from_named(const io::Checkpoint& ck, const ModelConfig& cfg, const std::string& prefix) {
    auto p = init_model<float>(cfg);
    p.visit([&](const std::string& name, Tensor<float>& t) {
        const auto& src = ck.get(prefix + name);
        if (src.shape() != t.shape())
            throw DataError("checkpoint tensor '" + prefix + name + "' has shape " + shape_str(src.shape()) +
                            ", model expects " + shape_str(t.shape()));
        t = src;
    });
    return p;
}

Tensor<float> prepare_image(const encoders::ImageSample& img, const ModelConfig& cfg) {
    const auto& e = cfg.encoder;
    if (img.height != e.image_height || img.width != e.image_width || img.channels != e.image_channels)
        throw DataError("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                        std::to_string(img.channels) + ", model expects " + std::to_string(e.image_height) + "x" +
                        std::to_string(e.image_width) + "x" + std::to_string(e.image_channels));
    return encoders::patchify_image(img, e.patch_size);
}

encoders::CloudPatches prepare_cloud(const pointops::PointCloud& pc, const ModelConfig& cfg, Id id) {
    if (pc.empty()) throw DataError("cloud " + std::to_string(id) + " is empty");
    const pointops::PointCloud* src = &pc;
    pointops::GroundRemovalResult removed;
    if (cfg.ground_removal && pc.size() >= 3) {
        auto rc = cfg.ransac;
        rc.seed = mix(cfg.seed, mix(id, 1));
        removed = pointops::ransac_ground_removal(pc, rc);
        src = &removed.cloud;
    }
    return encoders::make_cloud_patches(*src, cfg.encoder, mix(cfg.seed, mix(id, 2)));
}

template <typename T>
ad::Var<T> image_global(ad::Tape<T>& tape, const Tensor<float>& patches, const ModelParams<T>& p, ModelParams<T>* g,
                        const ModelConfig& cfg) {
    auto tower = encoders::encode_image(input_var(tape, patches), p.image, g ? &g->image : nullptr, cfg.encoder);
    return aggregation::aggregate(tower.tokens, tower.saliency, p.image_vlad, g ? &g->image_vlad : nullptr,
                                  cfg.aggregation);
}

template <typename T>
ad::Var<T> cloud_global(ad::Tape<T>& tape, const encoders::CloudPatches& cloud, const ModelParams<T>& p,
                        ModelParams<T>* g, const ModelConfig& cfg) {
    auto tower = encoders::encode_cloud(input_var(tape, cloud.centers), input_var(tape, cloud.neighborhoods), p.cloud,
                                        g ? &g->cloud : nullptr, cfg.encoder);
    return aggregation::aggregate(tower.tokens, tower.saliency, p.cloud_vlad, g ? &g->cloud_vlad : nullptr,
                                  cfg.aggregation);
}

template <typename T>
losses::LossBreakdown batch_loss(const ModelParams<T>& p, std::span<const SampleInput* const> batch,
                                 const ModelConfig& cfg, ModelParams<T>* grads) {
    const std::size_t B = batch.size();
    if (B == 0) throw DataError("batch_loss: empty batch");
    const int threads = kernels::thread_cap();
    const std::size_t slots = std::min<std::size_t>(static_cast<std::size_t>(threads), B);

    // Sample i accumulates into slot i % slots; each chunk of `slots`
    // consecutive samples therefore writes to distinct buffers.
    std::vector<ModelParams<T>> bufs;
    if (grads) bufs.assign(slots, zeros_like(p));

    std::vector<ad::Tape<T>> tapes(B);
    std::vector<ad::Var<T>> f2(B), f3(B);
    parallel_for(B, threads, [&](std::size_t i) {
        ModelParams<T>* g = grads ? &bufs[i % slots] : nullptr;
        f2[i] = image_global(tapes[i], batch[i]->patches, p, g, cfg);
        f3[i] = cloud_global(tapes[i], batch[i]->cloud, p, g, cfg);
    });

    const std::size_t Dg = f2[0].value().size();
    Tensor<T> F2(Shape{B, Dg}), F3(Shape{B, Dg});
    for (std::size_t i = 0; i < B; ++i) {
        std::copy(f2[i].value().vec().begin(), f2[i].value().vec().end(), F2.vec().begin() + i * Dg);
        std::copy(f3[i].value().vec().begin(), f3[i].value().vec().end(), F3.vec().begin() + i * Dg);
    }
    ad::Tape<T> lt;
    auto v2 = grads ? lt.leaf(std::move(F2)) : lt.constant(std::move(F2));
    auto v3 = grads ? lt.leaf(std::move(F3)) : lt.constant(std::move(F3));
    auto lv = losses::total_loss(v2, v3, cfg.loss);
    losses::LossBreakdown out{static_cast<double>(lv.total.value().item()),
                              static_cast<double>(lv.infonce.value().item()),
                              static_cast<double>(lv.relation_euc.value().item()),
                              static_cast<double>(lv.relation_hyp.value().item()),
                              static_cast<double>(lv.fused.value().item())};
    if (!std::isfinite(out.total)) throw NumericError("batch loss is not finite");
    if (!grads) return out;

    lt.backward(lv.total);
    const auto& d2 = lt.grad(v2);
    const auto& d3 = lt.grad(v3);
    auto dst = tensor_list(*grads);
    for (std::size_t c = 0; c < B; c += slots) {
        const std::size_t n = std::min(slots, B - c);
        parallel_for(n, threads, [&](std::size_t j) {
            const std::size_t i = c + j;
            auto& g2 = tapes[i].grad(f2[i]);
            auto& g3 = tapes[i].grad(f3[i]);
            std::copy(d2.vec().begin() + i * Dg, d2.vec().begin() + (i + 1) * Dg, g2.vec().begin());
            std::copy(d3.vec().begin() + i * Dg, d3.vec().begin() + (i + 1) * Dg, g3.vec().begin());
            tapes[i].backward();
        });
        for (std::size_t j = 0; j < n; ++j) {
            auto src = tensor_list(bufs[j]);
            for (std::size_t k = 0; k < src.size(); ++k) {
                auto& s = src[k]->vec();
                auto& d = dst[k]->vec();
                for (std::size_t e = 0; e < s.size(); ++e) d[e] += s[e];
                std::fill(s.begin(), s.end(), T(0));
            }
        }
        for (std::size_t j = 0; j < n; ++j) tapes[c + j] = ad::Tape<T>();
    }
    return out;
}

aggregation::GlobalFeature embed_image(const ModelParams<float>& p, const Tensor<float>& patches,
                                       const ModelConfig& cfg, Id id) {
    ad::Tape<float> t;
    auto y = image_global(t, patches, p, static_cast<ModelParams<float>*>(nullptr), cfg);
    return {y.value().vec(), aggregation::Modality::Image, id};
}

aggregation::GlobalFeature embed_cloud(const ModelParams<float>& p, const encoders::CloudPatches& cloud,
                                       const ModelConfig& cfg, Id id) {
    ad::Tape<float> t;
    auto y = cloud_global(t, cloud, p, static_cast<ModelParams<float>*>(nullptr), cfg);
    return {y.value().vec(), aggregation::Modality::Cloud, id};
}

#define I2P_INSTANTIATE(T)                                                                                     \
    template struct ModelParams<T>;                                                                            \
    template ModelParams<T> init_model<T>(const ModelConfig&);                                                 \
    template ModelParams<T> zeros_like<T>(ModelParams<T>);                                                     \
    template std::vector<T> flatten<T>(ModelParams<T>&);                                                       \
    template void unflatten<T>(std::span<const T>, ModelParams<T>&);                                           \
    template ad::Var<T> image_global<T>(ad::Tape<T>&, const Tensor<float>&, const ModelParams<T>&,             \
                                        ModelParams<T>*, const ModelConfig&);                                  \
    template ad::Var<T> cloud_global<T>(ad::Tape<T>&, const encoders::CloudPatches&, const ModelParams<T>&,    \
                                        ModelParams<T>*, const ModelConfig&);                                  \
    template losses::LossBreakdown batch_loss<T>(const ModelParams<T>&, std::span<const SampleInput* const>,   \
                                                 const ModelConfig&, ModelParams<T>*);

I2P_INSTANTIATE(float)
I2P_INSTANTIATE(double)

#undef I2P_INSTANTIATE

}  // namespace i2p::model
