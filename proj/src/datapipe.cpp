#include "i2p/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "i2p/io.hpp"
#include "i2p/kernels.hpp"

namespace i2p::datapipe {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

bool footprint_overlaps(const Box& b, double x0, double x1, double y0, double y1) {
    return b.center[0] + b.size[0] / 2 > x0 && b.center[0] - b.size[0] / 2 < x1 &&
           b.center[1] + b.size[1] / 2 > y0 && b.center[1] - b.size[1] / 2 < y1;
}

bool inside_footprint(const Box& b, double x, double y) {
    return std::abs(x - b.center[0]) < b.size[0] / 2 && std::abs(y - b.center[1]) < b.size[1] / 2;
}

// Entry distance of a ray into a box; exit distance when the origin is inside.
bool intersect_box(const Box& b, const std::array<double, 3>& o, const std::array<double, 3>& d, double& t) {
    double tmin = -std::numeric_limits<double>::infinity();
    double tmax = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < 3; ++a) {
        const double lo = b.center[a] - b.size[a] / 2, hi = b.center[a] + b.size[a] / 2;
        if (std::abs(d[a]) < 1e-12) {
            if (o[a] < lo || o[a] > hi) return false;
            continue;
        }
        double t1 = (lo - o[a]) / d[a], t2 = (hi - o[a]) / d[a];
        if (t1 > t2) std::swap(t1, t2);
        tmin = std::max(tmin, t1);
        tmax = std::min(tmax, t2);
    }
    if (tmax < tmin || tmax <= 0) return false;
    t = tmin > 0 ? tmin : tmax;
    return true;
}

bool in_extent(const SyntheticScene& s, double x, double y) {
    const double h = s.extent_m / 2;
    return std::abs(x) <= h && std::abs(y) <= h;
}

float quantize(double v) {
    return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f;
}

}  // namespace

SyntheticScene generate_scene(std::uint64_t seed, double extent_m, std::size_t landmark_count,
                              double corridor_half_width_m) {
    if (!(extent_m >= 40.0)) throw ConfigError("scene extent must be at least the 40 m submap size");
    if (!(corridor_half_width_m >= 0.0) || corridor_half_width_m * 2 >= extent_m / 2)
        throw ConfigError("corridor width does not fit the scene");
    SyntheticScene s;
    s.extent_m = extent_m;
    s.seed = seed;
    s.corridor_half_width_m = corridor_half_width_m;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> side(1.0, 6.0), height(1.5, 12.0), shade(0.2, 1.0), unit(0.0, 1.0);
    const double half = extent_m / 2;
    while (s.boxes.size() < landmark_count) {
        Box b;
        b.size = {side(rng), side(rng), height(rng)};
        const double hx = half - b.size[0] / 2, hy = half - b.size[1] / 2;
        b.center = {-hx + 2 * hx * unit(rng), -hy + 2 * hy * unit(rng), b.size[2] / 2};
        b.intensity = shade(rng);
        if (std::abs(b.center[1]) - b.size[1] / 2 < corridor_half_width_m) continue;
        s.boxes.push_back(b);
    }
    return s;
}

Hit cast_ray(const SyntheticScene& scene, const std::array<double, 3>& origin, const std::array<double, 3>& dir,
             bool include_ground) {
    Hit best;
    best.t = std::numeric_limits<double>::infinity();
    for (const auto& b : scene.boxes) {
        double t;
        if (intersect_box(b, origin, dir, t) && t < best.t) {
            best = {t, b.intensity, origin[2] + t * dir[2], true};
        }
    }
    if (include_ground && scene.ground && dir[2] < -1e-12) {
        const double t = -origin[2] / dir[2];
        if (t > 0 && t < best.t) best = {t, scene.ground_intensity, 0.0, true};
    }
    return best;
}

std::array<double, 3> pixel_direction(const RenderConfig& cfg, std::size_t row, std::size_t col) {
    const double deg = std::numbers::pi / 180.0;
    const double up = cfg.fov_up_deg * deg, span = (cfg.fov_up_deg + cfg.fov_down_deg) * deg;
    const double elev = up - (static_cast<double>(row) + 0.5) / static_cast<double>(cfg.image_height) * span;
    const double az = 2.0 * std::numbers::pi * (static_cast<double>(col) + 0.5) / static_cast<double>(cfg.image_width);
    return {std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az), std::sin(elev)};
}

PairSample render_pair(const SyntheticScene& scene, const PoseRecord& pose, const RenderConfig& cfg) {
    const double px = pose.position[0], py = pose.position[1];
    if (!in_extent(scene, px, py))
        throw RenderError("pose " + std::to_string(pose.id) + " lies outside the scene extent");
    if (cfg.image_height == 0 || cfg.image_width == 0) throw ConfigError("render: empty image size");
    if (!(cfg.max_range_m > 0) || !(cfg.submap_m > 0)) throw ConfigError("render: ranges must be positive");

    // Only boxes that can matter for this pose.
    SyntheticScene local;
    local.ground = scene.ground;
    local.ground_intensity = scene.ground_intensity;
    const double reach = std::max(cfg.max_range_m, cfg.submap_m * std::numbers::sqrt2);
    for (const auto& b : scene.boxes)
        if (footprint_overlaps(b, px - reach, px + reach, py - reach, py + reach)) local.boxes.push_back(b);

    PairSample out;
    out.pose = pose;
    auto& img = out.image;
    img.height = cfg.image_height;
    img.width = cfg.image_width;
    img.channels = 3;
    img.pixels.resize(img.height * img.width * 3);
    const std::array<double, 3> origin{px, py, pose.position[2] + cfg.sensor_height_m};
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c) {
            const auto h = cast_ray(local, origin, pixel_direction(cfg, r, c), cfg.render_ground);
            float* px3 = &img.pixels[(r * img.width + c) * 3];
            if (h.hit && h.t <= cfg.max_range_m) {
                px3[0] = quantize(h.t / cfg.max_range_m);
                px3[1] = quantize(h.intensity);
                px3[2] = quantize(h.z / cfg.height_scale_m);
            } else {
                px3[0] = 1.0f;
                px3[1] = 0.0f;
                px3[2] = 0.0f;
            }
        }

    // Area-weighted surface samples inside the submap window.
    const double w = cfg.submap_m / 2;
    const double x0 = px - w, x1 = px + w, y0 = py - w, y1 = py + w;
    struct Face {
        const Box* box;
        int kind;  // 0 top, 1/2 -x/+x, 3/4 -y/+y, 5 ground
        double area;
    };
    std::vector<Face> faces;
    std::vector<const Box*> near;
    for (const auto& b : local.boxes) {
        if (!footprint_overlaps(b, x0, x1, y0, y1)) continue;
        near.push_back(&b);
        const double sx = b.size[0], sy = b.size[1], sz = b.size[2];
        faces.push_back({&b, 0, sx * sy});
        faces.push_back({&b, 1, sy * sz});
        faces.push_back({&b, 2, sy * sz});
        faces.push_back({&b, 3, sx * sz});
        faces.push_back({&b, 4, sx * sz});
    }
    if (scene.ground) faces.push_back({nullptr, 5, cfg.submap_m * cfg.submap_m});
    if (faces.empty() || cfg.cloud_points == 0) return out;

    std::vector<double> weights;
    for (const auto& f : faces) weights.push_back(f.area);
    std::mt19937_64 rng(splitmix(cfg.seed ^ splitmix(scene.seed) ^ splitmix(pose.id + 0x51ed270b27bd2b7ULL)));
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma_m);
    std::size_t attempts = 0;
    const std::size_t max_attempts = 1000 * cfg.cloud_points + 1000;
    out.cloud.xyz.reserve(cfg.cloud_points * 3);
    while (out.cloud.size() < cfg.cloud_points) {
        if (++attempts > max_attempts) throw RenderError("render: surface sampling failed to fill the submap");
        const auto& f = faces[pick(rng)];
        double p[3];
        if (f.kind == 5) {
            p[0] = px + cfg.submap_m * u(rng);
            p[1] = py + cfg.submap_m * u(rng);
            p[2] = 0.0;
            if (std::any_of(near.begin(), near.end(), [&](const Box* b) { return inside_footprint(*b, p[0], p[1]); }))
                continue;
        } else {
            const auto& b = *f.box;
            for (std::size_t a = 0; a < 3; ++a) p[a] = b.center[a] + b.size[a] * u(rng);
            const int axis = f.kind == 0 ? 2 : (f.kind <= 2 ? 0 : 1);
            const double sign = (f.kind == 0 || f.kind == 2 || f.kind == 4) ? 1.0 : -1.0;
            p[axis] = b.center[axis] + sign * b.size[axis] / 2;
        }
        if (p[0] < x0 || p[0] > x1 || p[1] < y0 || p[1] > y1) continue;
        out.cloud.push_back({static_cast<float>(p[0] + noise(rng) - px), static_cast<float>(p[1] + noise(rng) - py),
                             static_cast<float>(p[2] + noise(rng) - pose.position[2])});
    }
    return out;
}

TrajectoryKind parse_trajectory_kind(const std::string& s) {
    if (s == "straight") return TrajectoryKind::Straight;
    if (s == "random_walk") return TrajectoryKind::RandomWalk;
    throw ConfigError("unknown trajectory kind '" + s + "'");
}

std::string to_string(TrajectoryKind k) { return k == TrajectoryKind::Straight ? "straight" : "random_walk"; }

namespace {

bool inside_box(const SyntheticScene& scene, double x, double y, double margin) {
    for (const auto& b : scene.boxes)
        if (std::abs(x - b.center[0]) < b.size[0] / 2 + margin && std::abs(y - b.center[1]) < b.size[1] / 2 + margin)
            return true;
    return false;
}

}  // namespace

std::vector<PoseRecord> make_trajectory(const SyntheticScene& scene, const TrajectoryConfig& cfg) {
    if (!(cfg.step_m > 0)) throw ConfigError("trajectory step must be positive");
    std::vector<PoseRecord> poses;
    double x = cfg.start[0], y = cfg.start[1], heading = cfg.heading_rad;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> turn(0.0, cfg.turn_sigma_rad);
    // Random walks stay a half submap away from the scene border.
    const double keep = std::max(scene.extent_m / 2 - 20.0, 1.0);
    for (std::size_t i = 0; i < cfg.count; ++i) {
        if (!in_extent(scene, x, y))
            throw RenderError("trajectory pose " + std::to_string(i) + " leaves the scene extent");
        poses.push_back({static_cast<Id>(i), {x, y, 0.0}});
        if (cfg.kind == TrajectoryKind::RandomWalk) {
            heading += turn(rng);
            // Veer away from the border and from boxes, alternating sides in 22.5 degree steps.
            auto free = [&](double h) {
                const double nx = x + cfg.step_m * std::cos(h), ny = y + cfg.step_m * std::sin(h);
                return std::abs(nx) <= keep && std::abs(ny) <= keep && !inside_box(scene, nx, ny, 1.0);
            };
            for (int k = 1; k <= 16 && !free(heading); ++k)
                heading += (k % 2 ? 1.0 : -1.0) * k * std::numbers::pi / 8.0;
        }
        x += cfg.step_m * std::cos(heading);
        y += cfg.step_m * std::sin(heading);
    }
    return poses;
}

Dataset make_dataset(const SyntheticScene& scene, const std::vector<PoseRecord>& trajectory, double spacing_m,
                     const RenderConfig& cfg) {
    Dataset ds;
    ds.pairs.resize(trajectory.size());
    const auto n = static_cast<std::ptrdiff_t>(trajectory.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) num_threads(kernels::thread_cap())
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        try {
            ds.pairs[static_cast<std::size_t>(i)] = render_pair(scene, trajectory[static_cast<std::size_t>(i)], cfg);
        } catch (...) {
#pragma omp critical
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    ds.split = evaluation::split_query_database(trajectory, spacing_m);
    return ds;
}

void write_dataset(const fs::path& dir, const Dataset& ds) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "clouds");
    std::string csv = "id,x,y,z\n";
    char buf[128];
    for (const auto& p : ds.pairs) {
        std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(p.pose.id),
                      p.pose.position[0], p.pose.position[1], p.pose.position[2]);
        csv += buf;
        io::write_ppm(dir / "images" / (std::to_string(p.pose.id) + ".ppm"), p.image);
        io::write_i2pc(dir / "clouds" / (std::to_string(p.pose.id) + ".i2pc"), p.cloud);
    }
    io::write_text(dir / "poses.csv", csv);
    nlohmann::json split{{"query", ds.split.queries}, {"database", ds.split.database}};
    io::write_text(dir / "split.json", split.dump(1) + "\n");
}

std::vector<PoseRecord> read_poses_csv(const fs::path& path) {
    std::istringstream in(io::read_text(path));
    std::string line;
    std::vector<PoseRecord> poses;
    if (!std::getline(in, line) || line.rfind("id,x,y,z", 0) != 0)
        throw DataError(path.string() + ": expected header 'id,x,y,z'");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        PoseRecord p;
        unsigned long long id = 0;
        if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf", &id, &p.position[0], &p.position[1], &p.position[2]) != 4)
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed pose row");
        p.id = static_cast<Id>(id);
        for (double v : p.position)
            if (!std::isfinite(v)) throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-finite pose");
        poses.push_back(p);
    }
    return poses;
}

Dataset read_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " does not exist");
    Dataset ds;
    for (const auto& pose : read_poses_csv(dir / "poses.csv")) {
        PairSample s;
        s.pose = pose;
        s.image = io::read_ppm(dir / "images" / (std::to_string(pose.id) + ".ppm"));
        s.cloud = io::read_i2pc(dir / "clouds" / (std::to_string(pose.id) + ".i2pc"));
        ds.pairs.push_back(std::move(s));
    }
    nlohmann::json split;
    try {
        split = nlohmann::json::parse(io::read_text(dir / "split.json"));
        ds.split.queries = split.at("query").get<std::vector<Id>>();
        ds.split.database = split.at("database").get<std::vector<Id>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError((dir / "split.json").string() + ": " + e.what());
    }
    return ds;
}

}  // namespace i2p::datapipe
