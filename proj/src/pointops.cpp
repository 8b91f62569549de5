#include "i2p/pointops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "i2p/kernels.hpp"

namespace i2p::pointops {

PointCloud::PointCloud(std::vector<float> packed) : xyz(std::move(packed)) {
    if (xyz.size() % 3 != 0) throw DataError("point cloud: packed length is not a multiple of 3");
}

PointCloud PointCloud::from_points(std::span<const Point3> points) {
    PointCloud pc;
    pc.xyz.reserve(points.size() * 3);
    for (const auto& p : points) pc.push_back(p);
    return pc;
}

PointCloud PointCloud::subset(std::span<const std::size_t> index) const {
    PointCloud out;
    out.xyz.reserve(index.size() * 3);
    for (auto i : index) {
        if (i >= size()) throw IndexError("point index " + std::to_string(i) + " out of range");
        out.push_back(point(i));
    }
    return out;
}

bool PointCloud::all_finite() const {
    return std::all_of(xyz.begin(), xyz.end(), [](float v) { return std::isfinite(v); });
}

std::vector<std::size_t> fps(const PointCloud& pc, std::size_t m, std::uint64_t seed) {
    const std::size_t n = pc.size();
    if (m > n) {
        throw SamplingError("fps: requested " + std::to_string(m) + " samples from " + std::to_string(n) +
                            " points");
    }
    std::vector<std::size_t> out;
    if (m == 0) return out;
    out.reserve(m);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    std::size_t cur = first(rng);
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    for (std::size_t s = 0; s < m; ++s) {
        out.push_back(cur);
        const float q[3] = {pc.xyz[3 * cur], pc.xyz[3 * cur + 1], pc.xyz[3 * cur + 2]};
        kernels::min_update(pc.xyz, q, min_dist);
        // Selected points drop out of the argmax even when the cloud has duplicates.
        min_dist[cur] = -1.0;
        if (s + 1 == m) break;
        // max_element returns the first maximum, i.e. the lowest index on ties.
        cur = static_cast<std::size_t>(std::max_element(min_dist.begin(), min_dist.end()) - min_dist.begin());
    }
    return out;
}

std::vector<std::size_t> fps_padded(const PointCloud& pc, std::size_t m, std::uint64_t seed, bool& padded) {
    const std::size_t n = pc.size();
    padded = m > n;
    if (!padded) return fps(pc, m, seed);
    if (n == 0) throw SamplingError("fps: cannot pad an empty cloud");
    auto out = fps(pc, n, seed);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (out.size() < m) out.push_back(pick(rng));
    return out;
}

IndexMatrix knn(const PointCloud& pc, std::span<const float> centers_xyz, std::size_t k) {
    const std::size_t n = pc.size();
    if (k > n) {
        throw NeighborhoodError("knn: k = " + std::to_string(k) + " exceeds cloud size " + std::to_string(n));
    }
    if (centers_xyz.size() % 3 != 0) throw DataError("knn: packed centers length is not a multiple of 3");
    IndexMatrix out;
    out.rows = centers_xyz.size() / 3;
    out.k = k;
    out.index.resize(out.rows * k);
    std::vector<double> d(n);
    std::vector<std::size_t> order(n);
    for (std::size_t r = 0; r < out.rows; ++r) {
        kernels::squared_distances(pc.xyz, &centers_xyz[3 * r], d);
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto closer = [&](std::size_t a, std::size_t b) { return d[a] < d[b] || (d[a] == d[b] && a < b); };
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), closer);
        std::copy(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), out.index.begin() + r * k);
    }
    return out;
}

PatchSet group_normalize(const PointCloud& pc, std::span<const float> centers_xyz, const IndexMatrix& idx) {
    if (centers_xyz.size() != idx.rows * 3) throw DataError("group_normalize: center count mismatch");
    PatchSet ps;
    ps.count = idx.rows;
    ps.k = idx.k;
    ps.centers.assign(centers_xyz.begin(), centers_xyz.end());
    ps.neighborhoods.resize(idx.rows * idx.k * 3);
    for (std::size_t r = 0; r < idx.rows; ++r) {
        for (std::size_t j = 0; j < idx.k; ++j) {
            const std::size_t p = idx.at(r, j);
            if (p >= pc.size()) throw IndexError("group_normalize: index " + std::to_string(p) + " out of range");
            for (std::size_t c = 0; c < 3; ++c)
                ps.neighborhoods[(r * idx.k + j) * 3 + c] = pc.xyz[3 * p + c] - centers_xyz[3 * r + c];
        }
    }
    return ps;
}

double Plane::distance(const Point3& p) const {
    return std::abs(normal[0] * p[0] + normal[1] * p[1] + normal[2] * p[2] + offset);
}

namespace {

bool plane_through(const Point3& a, const Point3& b, const Point3& c, Plane& out) {
    const double u[3] = {double(b[0]) - a[0], double(b[1]) - a[1], double(b[2]) - a[2]};
    const double v[3] = {double(c[0]) - a[0], double(c[1]) - a[1], double(c[2]) - a[2]};
    double n[3] = {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    const double scale = std::max({std::abs(u[0]), std::abs(u[1]), std::abs(u[2]), std::abs(v[0]),
                                   std::abs(v[1]), std::abs(v[2]), 1e-12});
    if (len <= 1e-9 * scale * scale) return false;
    for (auto& x : n) x /= len;
    out.normal = {n[0], n[1], n[2]};
    out.offset = -(n[0] * a[0] + n[1] * a[1] + n[2] * a[2]);
    return true;
}

}  // namespace

GroundRemovalResult ransac_ground_removal(const PointCloud& pc, const GroundRemovalConfig& cfg) {
    const std::size_t n = pc.size();
    if (n < 3) throw DataError("ransac_ground_removal: need at least 3 points");
    GroundRemovalResult res;
    res.cloud = pc;

    constexpr int kMaxRedraws = 16;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    bool found = false;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        Plane plane;
        bool valid = false;
        for (int attempt = 0; attempt < kMaxRedraws && !valid; ++attempt) {
            const std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
            if (a == b || b == c || a == c) continue;
            valid = plane_through(pc.point(a), pc.point(b), pc.point(c), plane);
        }
        if (!valid) continue;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (plane.distance(pc.point(i)) <= cfg.inlier_threshold_m) ++count;
        if (!found || count > res.inliers) {
            found = true;
            res.inliers = count;
            res.plane = plane;
        }
    }
    if (!found) {
        res.status = GroundRemovalStatus::NoValidPlane;
        return res;
    }
    if (static_cast<double>(res.inliers) < cfg.min_inlier_fraction * static_cast<double>(n)) {
        res.status = GroundRemovalStatus::NoDominantPlane;
        return res;
    }
    PointCloud kept;
    for (std::size_t i = 0; i < n; ++i)
        if (res.plane.distance(pc.point(i)) > cfg.inlier_threshold_m) kept.push_back(pc.point(i));
    if (kept.empty()) {
        res.status = GroundRemovalStatus::AllOnPlane;
        return res;
    }
    res.cloud = std::move(kept);
    res.status = GroundRemovalStatus::Removed;
    return res;
}

}  // namespace i2p::pointops
