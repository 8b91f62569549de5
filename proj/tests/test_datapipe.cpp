#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "i2p/datapipe.hpp"
#include "support.hpp"

namespace i2p {
namespace {

using namespace datapipe;
using testing::Rng;

RenderConfig small_render() {
    RenderConfig r;
    r.image_height = 8;
    r.image_width = 32;
    r.cloud_points = 128;
    return r;
}

TEST(Scene, LandmarksStayInsideExtentAndOutOfCorridor) {
    auto s = generate_scene(3, 40.0, 20, 3.0);
    ASSERT_EQ(s.boxes.size(), 20u);
    for (const auto& b : s.boxes) {
        EXPECT_GE(b.center[0] - b.size[0] / 2, -20.0);
        EXPECT_LE(b.center[0] + b.size[0] / 2, 20.0);
        EXPECT_GE(b.center[1] - b.size[1] / 2, -20.0);
        EXPECT_LE(b.center[1] + b.size[1] / 2, 20.0);
        EXPECT_GE(std::abs(b.center[1]) - b.size[1] / 2, 3.0);
        EXPECT_DOUBLE_EQ(b.center[2], b.size[2] / 2);
        EXPECT_GT(b.intensity, 0.0);
        EXPECT_LE(b.intensity, 1.0);
    }
}

TEST(Scene, DeterministicInSeed) {
    auto a = generate_scene(11, 80, 30), b = generate_scene(11, 80, 30), c = generate_scene(12, 80, 30);
    for (std::size_t i = 0; i < 30; ++i) {
        EXPECT_EQ(a.boxes[i].center, b.boxes[i].center);
        EXPECT_EQ(a.boxes[i].size, b.boxes[i].size);
    }
    EXPECT_NE(a.boxes[0].center, c.boxes[0].center);
}

TEST(Scene, ZeroLandmarksAndBadExtent) {
    EXPECT_TRUE(generate_scene(1, 40, 0).boxes.empty());
    EXPECT_THROW(generate_scene(1, 30, 5), ConfigError);
    EXPECT_THROW(generate_scene(1, 40, 5, 15.0), ConfigError);
}

TEST(Ray, HitsBoxFaceAtAnalyticDistance) {
    SyntheticScene s;
    s.ground = false;
    s.boxes.push_back({{10, 0, 2}, {2, 4, 4}, 0.7});
    auto h = cast_ray(s, {0, 0, 1}, {1, 0, 0}, false);
    ASSERT_TRUE(h.hit);
    EXPECT_DOUBLE_EQ(h.t, 9.0);
    EXPECT_DOUBLE_EQ(h.intensity, 0.7);
    EXPECT_DOUBLE_EQ(h.z, 1.0);
    // Diagonal ray entering through the top face.
    const double r = 1.0 / std::sqrt(2.0);
    auto d = cast_ray(s, {10, 0, 8}, {r * 0.0, 0.0, -1.0}, false);
    ASSERT_TRUE(d.hit);
    EXPECT_DOUBLE_EQ(d.t, 4.0);
    auto miss = cast_ray(s, {0, 0, 1}, {-1, 0, 0}, false);
    EXPECT_FALSE(miss.hit);
    auto above = cast_ray(s, {0, 0, 1}, {r, 0, r}, false);
    EXPECT_FALSE(above.hit);
}

TEST(Ray, GroundPlaneOnlyWhenRequested) {
    SyntheticScene s;
    const double r = 1.0 / std::sqrt(2.0);
    auto g = cast_ray(s, {0, 0, 2}, {r, 0, -r}, true);
    ASSERT_TRUE(g.hit);
    EXPECT_NEAR(g.t, 2.0 * std::sqrt(2.0), 1e-12);
    EXPECT_EQ(g.z, 0.0);
    EXPECT_FALSE(cast_ray(s, {0, 0, 2}, {r, 0, -r}, false).hit);
    EXPECT_FALSE(cast_ray(s, {0, 0, 2}, {r, 0, r}, true).hit);
}

TEST(Ray, RandomBoxesMatchSlabOracle) {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        SyntheticScene s;
        s.ground = false;
        Box b{{testing::uniform(rng, -10, 10), testing::uniform(rng, -10, 10), 3},
              {testing::uniform(rng, 1, 4), testing::uniform(rng, 1, 4), 6}, 0.5};
        s.boxes.push_back(b);
        const double az = testing::uniform(rng, 0, 2 * std::numbers::pi);
        const std::array<double, 3> o{20, 20, 1}, d{std::cos(az), std::sin(az), 0};
        auto h = cast_ray(s, o, d, false);
        // Oracle: march the ray in fine steps and bracket the first entry.
        double first = -1;
        for (double t = 0; t < 80; t += 1e-3) {
            const double x = o[0] + t * d[0], y = o[1] + t * d[1];
            if (std::abs(x - b.center[0]) <= b.size[0] / 2 && std::abs(y - b.center[1]) <= b.size[1] / 2) {
                first = t;
                break;
            }
        }
        EXPECT_EQ(h.hit, first >= 0);
        if (h.hit && first >= 0) {
            EXPECT_NEAR(h.t, first, 2e-3);
        }
    }
}

TEST(Render, EmptySceneRendersMissesAndNoCloud) {
    SyntheticScene s;
    s.ground = false;
    auto p = render_pair(s, {0, {0, 0, 0}}, small_render());
    ASSERT_EQ(p.image.pixels.size(), 8u * 32u * 3u);
    for (std::size_t i = 0; i < p.image.pixels.size(); i += 3) {
        EXPECT_EQ(p.image.pixels[i], 1.0f);
        EXPECT_EQ(p.image.pixels[i + 1], 0.0f);
    }
    EXPECT_EQ(p.cloud.size(), 0u);
}

TEST(Render, GroundOnlyCloudLiesOnPlaneInsideSubmap) {
    SyntheticScene s;
    auto cfg = small_render();
    auto p = render_pair(s, {4, {5, -3, 0}}, cfg);
    ASSERT_EQ(p.cloud.size(), cfg.cloud_points);
    for (std::size_t i = 0; i < p.cloud.size(); ++i) {
        auto q = p.cloud.point(i);
        EXPECT_LE(std::abs(q[0]), cfg.submap_m / 2 + 0.2);
        EXPECT_LE(std::abs(q[1]), cfg.submap_m / 2 + 0.2);
        EXPECT_LT(std::abs(q[2]), 0.2);
    }
}

TEST(Render, PixelsInUnitRangeAndDeterministic) {
    auto s = generate_scene(5, 60, 25);
    auto cfg = small_render();
    auto a = render_pair(s, {1, {0, 0, 0}}, cfg), b = render_pair(s, {1, {0, 0, 0}}, cfg);
    EXPECT_EQ(a.image.pixels, b.image.pixels);
    EXPECT_EQ(a.cloud.xyz, b.cloud.xyz);
    for (float v : a.image.pixels) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
    EXPECT_THROW(render_pair(s, {2, {100, 0, 0}}, cfg), RenderError);
}

TEST(Render, PixelDirectionsAreUnitAndCoverAzimuth) {
    auto cfg = small_render();
    for (std::size_t r = 0; r < cfg.image_height; ++r)
        for (std::size_t c = 0; c < cfg.image_width; ++c) {
            auto d = pixel_direction(cfg, r, c);
            EXPECT_NEAR(d[0] * d[0] + d[1] * d[1] + d[2] * d[2], 1.0, 1e-12);
        }
    auto top = pixel_direction(cfg, 0, 0), bottom = pixel_direction(cfg, cfg.image_height - 1, 0);
    EXPECT_GT(top[2], 0.0);
    EXPECT_LT(bottom[2], 0.0);
}

TEST(Trajectory, StraightStepsAndKinds) {
    SyntheticScene s;
    s.extent_m = 200;
    TrajectoryConfig t;
    t.count = 10;
    t.step_m = 2;
    auto poses = make_trajectory(s, t);
    ASSERT_EQ(poses.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_EQ(poses[i].id, i);
        EXPECT_NEAR(poses[i].position[0], 2.0 * double(i), 1e-12);
    }
    EXPECT_EQ(parse_trajectory_kind(to_string(TrajectoryKind::RandomWalk)), TrajectoryKind::RandomWalk);
    EXPECT_THROW(parse_trajectory_kind("spiral"), ConfigError);
    t.count = 200;
    EXPECT_THROW(make_trajectory(s, t), RenderError);
}

TEST(Trajectory, RandomWalkKeepsStepLength) {
    auto s = generate_scene(7, 120, 40);
    TrajectoryConfig t;
    t.kind = TrajectoryKind::RandomWalk;
    t.count = 100;
    t.step_m = 3;
    t.seed = 4;
    auto poses = make_trajectory(s, t);
    for (std::size_t i = 1; i < poses.size(); ++i)
        EXPECT_NEAR(evaluation::distance(poses[i], poses[i - 1]), 3.0, 1e-9);
}

TEST(Dataset, PairsMatchPosesAndSplitCoversAll) {
    SyntheticScene s = generate_scene(9, 200, 30);
    TrajectoryConfig t;
    t.count = 100;
    t.start = {-50, 0};
    auto traj = make_trajectory(s, t);
    auto ds = make_dataset(s, traj, 3.0, small_render());
    ASSERT_EQ(ds.pairs.size(), 100u);
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(ds.pairs[i].pose.id, traj[i].id);
    EXPECT_EQ(ds.split.queries.size(), 34u);
    EXPECT_EQ(ds.split.queries.size() + ds.split.database.size(), 100u);
}

TEST(Dataset, WriteReadRoundTrip) {
    SyntheticScene s = generate_scene(2, 80, 15);
    TrajectoryConfig t;
    t.count = 6;
    auto ds = make_dataset(s, make_trajectory(s, t), 2.0, small_render());
    auto dir = testing::temp_dir("dataset_rt");
    write_dataset(dir, ds);
    auto back = read_dataset(dir);
    ASSERT_EQ(back.pairs.size(), ds.pairs.size());
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        EXPECT_EQ(back.pairs[i].pose.id, ds.pairs[i].pose.id);
        EXPECT_EQ(back.pairs[i].pose.position, ds.pairs[i].pose.position);
        EXPECT_EQ(back.pairs[i].cloud.xyz, ds.pairs[i].cloud.xyz);
        // Pixels are already quantized to 8 bits.
        EXPECT_EQ(back.pairs[i].image.pixels, ds.pairs[i].image.pixels);
    }
    EXPECT_EQ(back.split.queries, ds.split.queries);
    EXPECT_EQ(back.split.database, ds.split.database);
    EXPECT_THROW(read_dataset(dir / "missing"), DataError);
}

TEST(Dataset, MalformedPoseCsv) {
    auto dir = testing::temp_dir("bad_poses");
    io::write_text(dir / "poses.csv", "id,x,y,z\n1,2,nope,3\n");
    EXPECT_THROW(read_poses_csv(dir / "poses.csv"), DataError);
    io::write_text(dir / "poses.csv", "a,b\n");
    EXPECT_THROW(read_poses_csv(dir / "poses.csv"), DataError);
}

}  // namespace
}  // namespace i2p
