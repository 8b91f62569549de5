#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "i2p/errors.hpp"

namespace i2p::pointops {

class SamplingError : public DataError {
public:
    using DataError::DataError;
};

class NeighborhoodError : public DataError {
public:
    using DataError::DataError;
};

class IndexError : public DataError {
public:
    using DataError::DataError;
};

using Point3 = std::array<float, 3>;

// Packed xyz coordinates in meters.
struct PointCloud {
    std::vector<float> xyz;

    PointCloud() = default;
    explicit PointCloud(std::vector<float> packed);
    static PointCloud from_points(std::span<const Point3> points);

    std::size_t size() const { return xyz.size() / 3; }
    bool empty() const { return xyz.empty(); }
    Point3 point(std::size_t i) const { return {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]}; }
    void push_back(const Point3& p) { xyz.insert(xyz.end(), p.begin(), p.end()); }
    PointCloud subset(std::span<const std::size_t> index) const;
    bool all_finite() const;
};

struct PatchSet {
    std::size_t count = 0;       // patches
    std::size_t k = 0;           // points per patch
    std::vector<float> centers;  // count x 3
    // count x k x 3, relative to the patch center.
    std::vector<float> neighborhoods;
};

// Row-major (rows x k) index matrix.
struct IndexMatrix {
    std::size_t rows = 0;
    std::size_t k = 0;
    std::vector<std::size_t> index;

    std::size_t at(std::size_t r, std::size_t j) const { return index[r * k + j]; }
};

// Greedy farthest point sampling. The first index is drawn uniformly from
// `seed`; each later pick maximizes its minimum squared distance to the picks
// so far, ties to the lower index. Throws SamplingError when m > size.
std::vector<std::size_t> fps(const PointCloud& pc, std::size_t m, std::uint64_t seed);

// FPS that pads with seeded draws with replacement when the cloud has fewer
// than m points. `padded` reports whether that happened.
std::vector<std::size_t> fps_padded(const PointCloud& pc, std::size_t m, std::uint64_t seed, bool& padded);

// k nearest cloud points of each center, sorted by ascending distance with
// ties to the lower index. Throws NeighborhoodError when k > size.
IndexMatrix knn(const PointCloud& pc, std::span<const float> centers_xyz, std::size_t k);

// neighborhoods[i][j] = pc[idx(i, j)] - centers[i].
PatchSet group_normalize(const PointCloud& pc, std::span<const float> centers_xyz, const IndexMatrix& idx);

struct Plane {
    std::array<double, 3> normal{0.0, 0.0, 1.0};  // unit length
    double offset = 0.0;                          // normal . p + offset = 0

    double distance(const Point3& p) const;
};

struct GroundRemovalConfig {
    std::size_t iterations = 100;
    double inlier_threshold_m = 0.15;
    double min_inlier_fraction = 0.3;
    std::uint64_t seed = 0;
};

enum class GroundRemovalStatus {
    Removed,         // inliers of the best plane dropped
    NoDominantPlane, // best consensus below min_inlier_fraction: input returned
    NoValidPlane,    // every sample was degenerate: input returned
    AllOnPlane,      // no point survives removal: flagged, input returned
};

struct GroundRemovalResult {
    PointCloud cloud;
    GroundRemovalStatus status = GroundRemovalStatus::NoValidPlane;
    Plane plane;
    std::size_t inliers = 0;
};

// RANSAC plane fit; drops points within the inlier threshold of the
// best-consensus plane. Throws DataError for clouds with fewer than 3 points.
GroundRemovalResult ransac_ground_removal(const PointCloud& pc, const GroundRemovalConfig& cfg);

}  // namespace i2p::pointops
