#pragma once

// Seeded generators and small helpers shared by the test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "i2p/autograd.hpp"
#include "i2p/evaluation.hpp"
#include "i2p/model.hpp"
#include "i2p/nn.hpp"
#include "i2p/pointops.hpp"
#include "i2p/tensor.hpp"

namespace i2p::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo = -1.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gauss(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

template <typename T = double>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(shape);
    for (auto& v : t.vec()) v = static_cast<T>(uniform(rng, lo, hi));
    return t;
}

// Rows drawn from a Gaussian and scaled to unit norm.
template <typename T = double>
Tensor<T> random_unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor<T> t(Shape{rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        double n = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double g = gauss(rng);
            t.at(r, c) = static_cast<T>(g);
            n += g * g;
        }
        n = std::sqrt(n);
        for (std::size_t c = 0; c < cols; ++c) t.at(r, c) = static_cast<T>(t.at(r, c) / n);
    }
    return t;
}

inline pointops::PointCloud random_cloud(std::size_t n, Rng& rng, double extent = 10.0) {
    pointops::PointCloud pc;
    for (std::size_t i = 0; i < n; ++i)
        pc.push_back({static_cast<float>(uniform(rng, -extent, extent)), static_cast<float>(uniform(rng, -extent, extent)),
                      static_cast<float>(uniform(rng, -extent, extent))});
    return pc;
}

// Gradient check of a tape-built function of several inputs, reduced to a
// scalar with fixed random weights so every output element is exercised.
using Builder = std::function<ad::Var<double>(ad::Tape<double>&, const std::vector<ad::Var<double>>&)>;

inline nn::GradCheckReport check_op(const std::vector<Shape>& shapes, const Builder& build, std::uint64_t seed,
                                    double lo = -1.0, double hi = 1.0, double h = 1e-6) {
    Rng rng(seed);
    std::vector<double> theta;
    for (const auto& s : shapes)
        for (std::size_t i = 0; i < shape_numel(s); ++i) theta.push_back(uniform(rng, lo, hi));
    auto f = [&](std::span<const double> x, std::span<double> grad) {
        ad::Tape<double> tape;
        std::vector<ad::Var<double>> in;
        std::size_t off = 0;
        for (const auto& s : shapes) {
            const std::size_t n = shape_numel(s);
            in.push_back(tape.leaf(Tensor<double>(s, std::vector<double>(x.begin() + off, x.begin() + off + n))));
            off += n;
        }
        auto out = build(tape, in);
        Rng wr(seed ^ 0x5bd1e995ULL);
        Tensor<double> w(out.shape());
        for (auto& v : w.vec()) v = uniform(wr, 0.5, 1.5);
        auto s = ad::sum(ad::mul(out, tape.constant(w)));
        if (!grad.empty()) {
            tape.backward(s);
            off = 0;
            for (const auto& v : in) {
                const auto& g = tape.grad(v);
                for (std::size_t i = 0; i < g.size(); ++i) grad[off + i] = g[i];
                off += g.size();
            }
        }
        return s.value().item();
    };
    return nn::grad_check(f, theta, h, 1e-6);
}

// Small model: 32x32 images with 16-pixel patches (4 patch tokens), width 16,
// one block per tower, 8 cloud tokens of 4 neighbours.
inline model::ModelConfig toy_model_config() {
    model::ModelConfig c;
    auto& e = c.encoder;
    e.image_height = 32;
    e.image_width = 32;
    e.image_channels = 3;
    e.patch_size = 16;
    e.blocks = 1;
    e.image_heads = 2;
    e.cloud_heads = 2;
    e.image_dim = 16;
    e.cloud_dim = 16;
    e.cloud_tokens = 8;
    e.neighbors = 4;
    e.mlp_ratio = 2;
    e.tokenizer_channels = {8, 16};
    c.aggregation.clusters = 4;
    c.aggregation.output_dim = 8;
    c.ground_removal = false;
    return c;
}

// Random image and cloud preprocessed for `cfg`.
inline model::SampleInput random_sample(const model::ModelConfig& cfg, evaluation::Id id, Rng& rng) {
    const auto& e = cfg.encoder;
    encoders::ImageSample img{e.image_height, e.image_width, e.image_channels, {}};
    img.pixels.resize(e.image_height * e.image_width * e.image_channels);
    for (auto& v : img.pixels) v = static_cast<float>(uniform(rng, 0, 1));
    model::SampleInput s;
    s.id = id;
    s.patches = model::prepare_image(img, cfg);
    s.cloud = model::prepare_cloud(random_cloud(64, rng, 8.0), cfg, id);
    return s;
}

// Toy retrieval set: queries and database items on a 100 m line, each query
// with a full ranking of the database. Similarities are quantized to 0.05 so
// thresholds repeat across queries.
struct RetrievalSet {
    std::vector<evaluation::RetrievalResult> results;
    std::vector<evaluation::PoseRecord> poses;
};

inline RetrievalSet random_retrieval_set(std::size_t queries, std::size_t database, Rng& rng) {
    RetrievalSet s;
    for (std::size_t i = 0; i < queries + database; ++i)
        s.poses.push_back({i, {uniform(rng, 0, 100), uniform(rng, -5, 5), 0.0}});
    for (std::size_t q = 0; q < queries; ++q) {
        std::vector<std::pair<double, evaluation::Id>> ranked;
        for (std::size_t d = 0; d < database; ++d)
            ranked.emplace_back(std::round(uniform(rng, -1, 1) * 20) / 20, queries + d);
        std::sort(ranked.begin(), ranked.end(),
                  [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
        evaluation::RetrievalResult r;
        r.query_id = q;
        for (const auto& [sim, id] : ranked) {
            r.candidates.push_back(id);
            r.similarities.push_back(sim);
        }
        s.results.push_back(std::move(r));
    }
    return s;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("i2p_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace i2p::testing
