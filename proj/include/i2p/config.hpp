#pragma once

// Run configuration shared by the CLI commands: JSON round-trip, named
// profiles, and seed propagation.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "i2p/datapipe.hpp"
#include "i2p/model.hpp"
#include "i2p/train.hpp"

namespace i2p::config {

struct SceneConfig {
    double extent_m = 120.0;
    std::size_t landmarks = 80;
    double corridor_half_width_m = 3.0;
};

struct EvalConfig {
    double eta_m = 20.0;
    std::vector<std::size_t> topn{1, 5, 10, 15, 20};
    double spacing_m = 3.0;
};

struct RunConfig {
    std::string profile = "desk";
    std::uint64_t seed = 0;
    model::ModelConfig model;
    train::TrainConfig train;
    SceneConfig scene;
    datapipe::TrajectoryConfig trajectory;
    datapipe::RenderConfig render;
    EvalConfig eval;

    // Copies `seed` into every component seed.
    void set_seed(std::uint64_t s);
    // Throws ConfigError.
    void validate() const;
};

// Small model on 64x256 panoramas.
RunConfig desk_profile();
// Full-size settings: ViT-S sized towers, 512x1024 images, SGD.
RunConfig paper_profile();
// "desk" or "paper"; ConfigError otherwise.
RunConfig profile(const std::string& name);

nlohmann::json to_json(const RunConfig& cfg);
// Overlays the keys present in `j` onto `base`. Unknown keys are a ConfigError.
RunConfig from_json(const nlohmann::json& j, RunConfig base);
// Starts from the profile named in the file ("profile" key, default desk).
RunConfig load(const std::filesystem::path& path);
void save(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace i2p::config
