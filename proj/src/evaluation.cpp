#include "i2p/evaluation.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "i2p/kernels.hpp"

namespace i2p::evaluation {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kUnitNormTol = 1e-4;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

fs::path blob_path(const fs::path& manifest) {
    auto p = manifest;
    p.replace_extension(".f32");
    return p;
}

std::uint32_t crc_of(const std::vector<float>& v) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // Features are stored little-endian; this build targets little-endian hosts.
    return static_cast<std::uint32_t>(
        crc32(crc, reinterpret_cast<const Bytef*>(v.data()), static_cast<uInt>(v.size() * sizeof(float))));
}

}  // namespace

double distance(const PoseRecord& a, const PoseRecord& b) {
    double s = 0;
    for (std::size_t i = 0; i < 3; ++i) s += (a.position[i] - b.position[i]) * (a.position[i] - b.position[i]);
    return std::sqrt(s);
}

void RetrievalDatabase::add(DatabaseEntry entry) {
    if (index_.count(entry.id)) throw IngestionError("database: duplicate id " + std::to_string(entry.id));
    if (entry.feature.empty()) throw IngestionError("database: empty feature for id " + std::to_string(entry.id));
    if (entries_.empty()) dim_ = entry.feature.size();
    if (entry.feature.size() != dim_)
        throw IngestionError("database: feature width " + std::to_string(entry.feature.size()) + " != " +
                             std::to_string(dim_));
    double n2 = 0;
    for (float x : entry.feature) {
        if (!std::isfinite(x)) throw IngestionError("database: non-finite feature for id " + std::to_string(entry.id));
        n2 += static_cast<double>(x) * x;
    }
    if (std::abs(std::sqrt(n2) - 1.0) > kUnitNormTol)
        throw IngestionError("database: feature of id " + std::to_string(entry.id) + " is not unit norm");
    for (auto& p : entry.pose.position)
        if (!std::isfinite(p)) throw IngestionError("database: non-finite pose for id " + std::to_string(entry.id));
    entry.pose.id = entry.id;
    index_.emplace(entry.id, entries_.size());
    packed_.insert(packed_.end(), entry.feature.begin(), entry.feature.end());
    entries_.push_back(std::move(entry));
}

RetrievalResult RetrievalDatabase::query_topn(std::span<const float> q, std::size_t n, Id query_id) const {
    if (entries_.empty()) throw QueryError("query on an empty database");
    if (n == 0 || n > entries_.size())
        throw QueryError("query: N = " + std::to_string(n) + " but database holds " + std::to_string(size()));
    if (q.size() != dim_) throw QueryError("query: feature width " + std::to_string(q.size()) + " != " + std::to_string(dim_));
    std::vector<double> sims(entries_.size());
    kernels::dot_rows(packed_, q, dim_, sims);
    std::vector<std::size_t> order(entries_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto better = [&](std::size_t a, std::size_t b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return entries_[a].id < entries_[b].id;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), better);
    RetrievalResult r;
    r.query_id = query_id;
    for (std::size_t i = 0; i < n; ++i) {
        r.candidates.push_back(entries_[order[i]].id);
        r.similarities.push_back(sims[order[i]]);
    }
    return r;
}

std::uint32_t RetrievalDatabase::checksum() const { return crc_of(packed_); }

void RetrievalDatabase::save(const fs::path& manifest) const {
    const auto blob = blob_path(manifest);
    json m;
    m["format"] = "i2p-database";
    m["version"] = 1;
    m["count"] = entries_.size();
    m["dim"] = dim_;
    m["modality"] = aggregation::to_string(modality_);
    m["blob"] = blob.filename().string();
    m["checksum_crc32"] = checksum();
    json items = json::array();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& e = entries_[i];
        items.push_back({{"id", e.id},
                         {"pose", {e.pose.position[0], e.pose.position[1], e.pose.position[2]}},
                         {"offset", i * dim_ * sizeof(float)}});
    }
    m["entries"] = std::move(items);
    {
        std::ofstream out(blob, std::ios::binary);
        if (!out) throw DataError("cannot write " + blob.string());
        out.write(reinterpret_cast<const char*>(packed_.data()),
                  static_cast<std::streamsize>(packed_.size() * sizeof(float)));
        if (!out) throw DataError("short write to " + blob.string());
    }
    std::ofstream out(manifest);
    if (!out) throw DataError("cannot write " + manifest.string());
    out << m.dump(1) << '\n';
}

RetrievalDatabase RetrievalDatabase::load(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw DataError("cannot open database manifest " + manifest.string());
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw DataError("malformed database manifest " + manifest.string() + ": " + e.what());
    }
    if (m.value("format", "") != "i2p-database") throw DataError(manifest.string() + " is not a database manifest");
    const std::size_t count = m.at("count"), dim = m.at("dim");
    const fs::path blob = manifest.parent_path() / m.at("blob").get<std::string>();
    std::vector<float> packed(count * dim);
    std::ifstream b(blob, std::ios::binary);
    if (!b) throw DataError("cannot open feature blob " + blob.string());
    b.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size() * sizeof(float)));
    if (b.gcount() != static_cast<std::streamsize>(packed.size() * sizeof(float)))
        throw DataError("feature blob " + blob.string() + " is truncated");
    if (crc_of(packed) != m.at("checksum_crc32").get<std::uint32_t>())
        throw DataError("feature blob " + blob.string() + " fails its checksum");
    const auto& items = m.at("entries");
    if (items.size() != count) throw DataError("database manifest entry count mismatch");
    RetrievalDatabase db;
    db.modality_ = aggregation::parse_modality(m.value("modality", "cloud"));
    for (const auto& it : items) {
        DatabaseEntry e;
        e.id = it.at("id");
        for (std::size_t c = 0; c < 3; ++c) e.pose.position[c] = it.at("pose").at(c);
        const std::size_t off = it.at("offset").get<std::size_t>() / sizeof(float);
        if (off + dim > packed.size()) throw DataError("database entry offset out of range");
        e.feature.assign(packed.begin() + static_cast<std::ptrdiff_t>(off),
                         packed.begin() + static_cast<std::ptrdiff_t>(off + dim));
        db.add(std::move(e));
    }
    return db;
}

RetrievalDatabase build_database(std::span<const aggregation::GlobalFeature> features,
                                 std::span<const PoseRecord> poses) {
    std::unordered_map<Id, PoseRecord> by_id;
    for (const auto& p : poses)
        if (!by_id.emplace(p.id, p).second) throw IngestionError("duplicate pose id " + std::to_string(p.id));
    if (by_id.size() != features.size())
        throw IngestionError("feature and pose id sets differ in size (" + std::to_string(features.size()) + " vs " +
                             std::to_string(by_id.size()) + ")");
    RetrievalDatabase db;
    for (const auto& f : features) {
        auto it = by_id.find(f.id);
        if (it == by_id.end()) throw IngestionError("no pose for feature id " + std::to_string(f.id));
        db.add({f.id, it->second, f.values});
    }
    if (!features.empty()) db.set_modality(features.front().modality);
    return db;
}

RetrievalResult query_topn(const RetrievalDatabase& db, const aggregation::GlobalFeature& q, std::size_t n) {
    return db.query_topn(q.values, n, q.id);
}

PoseTable::PoseTable(std::span<const PoseRecord> poses) {
    for (const auto& p : poses) map_[p.id] = p;
}

const PoseRecord& PoseTable::at(Id id) const {
    auto it = map_.find(id);
    if (it == map_.end()) throw EvaluationError("no pose for id " + std::to_string(id));
    return it->second;
}

double recall_at_n(std::span<const RetrievalResult> results, const PoseTable& poses, double eta_m, std::size_t n) {
    if (results.empty()) throw EvaluationError("recall: empty result set");
    if (n == 0) throw EvaluationError("recall: N must be positive");
    std::size_t hits = 0;
    for (const auto& r : results) {
        const auto& qp = poses.at(r.query_id);
        const std::size_t m = std::min(n, r.candidates.size());
        for (std::size_t i = 0; i < m; ++i)
            if (distance(qp, poses.at(r.candidates[i])) <= eta_m) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

std::vector<SweepPoint> pr_curve(std::span<const RetrievalResult> results, const PoseTable& poses, double eta_m) {
    if (results.empty()) throw EvaluationError("pr sweep: empty result set");
    std::vector<double> sim;
    std::vector<bool> correct;
    for (const auto& r : results) {
        if (r.candidates.empty()) throw EvaluationError("pr sweep: query without candidates");
        sim.push_back(r.similarities.front());
        correct.push_back(distance(poses.at(r.query_id), poses.at(r.candidates.front())) <= eta_m);
    }
    std::set<double, std::greater<>> thresholds(sim.begin(), sim.end());
    std::vector<SweepPoint> out;
    for (double xi : thresholds) {
        SweepPoint p;
        p.threshold = xi;
        for (std::size_t i = 0; i < sim.size(); ++i) {
            const bool accept = sim[i] >= xi;
            if (accept && correct[i]) ++p.tp;
            else if (accept) ++p.fp;
            else if (correct[i]) ++p.fn;
            else ++p.tn;
        }
        const double tp = static_cast<double>(p.tp);
        p.precision = p.tp + p.fp ? tp / static_cast<double>(p.tp + p.fp) : 1.0;
        p.recall = p.tp + p.fn ? tp / static_cast<double>(p.tp + p.fn) : 0.0;
        const std::size_t den = 2 * p.tp + p.fp + p.fn;
        p.f1 = den ? 2.0 * tp / static_cast<double>(den) : 0.0;
        out.push_back(p);
    }
    return out;
}

F1Result max_f1(std::span<const RetrievalResult> results, const PoseTable& poses, double eta_m) {
    const auto curve = pr_curve(results, poses, eta_m);
    F1Result best{curve.front().f1, curve.front().threshold};
    for (const auto& p : curve)
        if (p.f1 > best.f1) best = {p.f1, p.threshold};
    return best;
}

Split split_query_database(std::span<const PoseRecord> poses, double spacing_m) {
    if (poses.size() < 2) throw SplitError("split: need at least 2 poses");
    if (!(spacing_m > 0.0)) throw SplitError("split: spacing must be positive");
    Split s;
    s.queries.push_back(poses[0].id);
    double arc = 0;
    for (std::size_t i = 1; i < poses.size(); ++i) {
        arc += distance(poses[i - 1], poses[i]);
        if (arc >= spacing_m - 1e-9) {
            s.queries.push_back(poses[i].id);
            arc = 0;
        } else {
            s.database.push_back(poses[i].id);
        }
    }
    return s;
}

MetricsReport evaluate(std::span<const RetrievalResult> results, const PoseTable& poses, double eta_m,
                       std::span<const std::size_t> topn) {
    MetricsReport r;
    for (auto n : topn) r.recall.emplace_back(n, recall_at_n(results, poses, eta_m, n));
    r.curve = pr_curve(results, poses, eta_m);
    r.f1 = max_f1(results, poses, eta_m);
    return r;
}

std::string metrics_csv(const MetricsReport& r) {
    std::string s = "metric,N,value\n";
    for (const auto& [n, v] : r.recall) s += "recall," + std::to_string(n) + "," + fmt(v) + "\n";
    s += "max_f1,," + fmt(r.f1.f1) + "\n";
    s += "f1_threshold,," + fmt(r.f1.threshold) + "\n";
    return s;
}

std::string pr_csv(const std::vector<SweepPoint>& curve) {
    std::string s = "threshold,precision,recall\n";
    for (const auto& p : curve) s += fmt(p.threshold) + "," + fmt(p.precision) + "," + fmt(p.recall) + "\n";
    return s;
}

}  // namespace i2p::evaluation
