#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "i2p/encoders.hpp"
#include "i2p/pointops.hpp"
#include "i2p/tensor.hpp"

namespace i2p::io {

namespace fs = std::filesystem;

// Binary cloud: "I2PC", u32 count, count little-endian f32 xyz triples.
void write_i2pc(const fs::path& path, const pointops::PointCloud& pc);
pointops::PointCloud read_i2pc(const fs::path& path);
// One "x y z" triple per line; blank lines and '#' comments skipped.
pointops::PointCloud read_xyz(const fs::path& path);
// Dispatches on extension (.i2pc, .xyz).
pointops::PointCloud read_cloud(const fs::path& path);

// 8-bit binary PGM (1 channel) or PPM (3 channels). Values are rounded from [0, 1].
void write_ppm(const fs::path& path, const encoders::ImageSample& img);
encoders::ImageSample read_ppm(const fs::path& path);
encoders::ImageSample read_png(const fs::path& path);
// Dispatches on extension (.ppm, .pgm, .png).
encoders::ImageSample read_image(const fs::path& path);

// Parameter file pair: <stem>.json manifest (name -> shape, byte offset) and
// <stem>.bin with the little-endian f32 data.
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    nlohmann::json meta = nlohmann::json::object();

    const Tensor<float>& get(const std::string& name) const;  // DataError when absent
    bool contains(const std::string& name) const;
};

void save_checkpoint(const fs::path& manifest, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const fs::path& manifest);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace i2p::io
