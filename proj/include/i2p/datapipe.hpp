#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "i2p/encoders.hpp"
#include "i2p/errors.hpp"
#include "i2p/evaluation.hpp"
#include "i2p/pointops.hpp"

namespace i2p::datapipe {

namespace fs = std::filesystem;
using evaluation::Id;
using evaluation::PoseRecord;

class RenderError : public DataError {
public:
    using DataError::DataError;
};

// Axis-aligned box standing on the ground plane z = 0.
struct Box {
    std::array<double, 3> center{};
    std::array<double, 3> size{};  // full extents, all > 0
    double intensity = 0.5;        // in (0, 1]
};

struct SyntheticScene {
    double extent_m = 80.0;  // square [-extent/2, extent/2]^2
    std::vector<Box> boxes;
    bool ground = true;
    double ground_intensity = 0.25;
    double corridor_half_width_m = 0.0;  // boxes keep clear of |y| < this
    std::uint64_t seed = 0;
};

// Landmarks are placed uniformly with their footprint inside the extent and
// outside the corridor around y = 0. Throws ConfigError for extent < 40 m.
SyntheticScene generate_scene(std::uint64_t seed, double extent_m, std::size_t landmark_count,
                              double corridor_half_width_m = 3.0);

struct RenderConfig {
    std::size_t image_height = 64;
    std::size_t image_width = 256;
    double fov_up_deg = 30.0;
    double fov_down_deg = 30.0;
    double sensor_height_m = 1.8;
    double max_range_m = 40.0;
    double height_scale_m = 12.0;  // height channel = hit z / this
    bool render_ground = false;
    std::size_t cloud_points = 2048;
    double submap_m = 40.0;
    double noise_sigma_m = 0.02;
    std::uint64_t seed = 0;
};

struct PairSample {
    PoseRecord pose;
    encoders::ImageSample image;  // channels: normalized depth (1 = miss), intensity, height
    pointops::PointCloud cloud;   // pose-local frame, meters
};

struct Hit {
    double t = 0;
    double intensity = 0;
    double z = 0;
    bool hit = false;
};

// Closest intersection of origin + t dir (t > 0) with the scene.
Hit cast_ray(const SyntheticScene& scene, const std::array<double, 3>& origin, const std::array<double, 3>& dir,
             bool include_ground);

// Unit ray direction of an image pixel; column 0 starts at azimuth 0 (+x).
std::array<double, 3> pixel_direction(const RenderConfig& cfg, std::size_t row, std::size_t col);

PairSample render_pair(const SyntheticScene& scene, const PoseRecord& pose, const RenderConfig& cfg);

enum class TrajectoryKind { Straight, RandomWalk };
TrajectoryKind parse_trajectory_kind(const std::string& s);
std::string to_string(TrajectoryKind k);

struct TrajectoryConfig {
    TrajectoryKind kind = TrajectoryKind::Straight;
    std::size_t count = 64;
    double step_m = 1.0;
    std::array<double, 2> start{0.0, 0.0};
    double heading_rad = 0.0;
    double turn_sigma_rad = 0.3;  // random walk only
    std::uint64_t seed = 0;
};

// Poses with ids 0..count-1 at ground level. Random walks steer clear of boxes and turn back before
// leaving the scene's central area. Throws RenderError if a pose leaves the extent.
std::vector<PoseRecord> make_trajectory(const SyntheticScene& scene, const TrajectoryConfig& cfg);

struct Dataset {
    std::vector<PairSample> pairs;
    evaluation::Split split;
};

Dataset make_dataset(const SyntheticScene& scene, const std::vector<PoseRecord>& trajectory, double spacing_m,
                     const RenderConfig& cfg);

// Layout: poses.csv, images/<id>.ppm, clouds/<id>.i2pc, split.json.
void write_dataset(const fs::path& dir, const Dataset& ds);
Dataset read_dataset(const fs::path& dir);
std::vector<PoseRecord> read_poses_csv(const fs::path& path);

}  // namespace i2p::datapipe
