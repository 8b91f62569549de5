#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "i2p/aggregation.hpp"
#include "i2p/errors.hpp"

namespace i2p::evaluation {

class IngestionError : public DataError {
public:
    using DataError::DataError;
};

class QueryError : public DataError {
public:
    using DataError::DataError;
};

class EvaluationError : public DataError {
public:
    using DataError::DataError;
};

class SplitError : public DataError {
public:
    using DataError::DataError;
};

using Id = std::uint64_t;

struct PoseRecord {
    Id id = 0;
    std::array<double, 3> position{0.0, 0.0, 0.0};  // meters
};

double distance(const PoseRecord& a, const PoseRecord& b);

struct DatabaseEntry {
    Id id = 0;
    PoseRecord pose;
    std::vector<float> feature;
};

struct RetrievalResult {
    Id query_id = 0;
    std::vector<Id> candidates;        // best first
    std::vector<double> similarities;  // non-increasing
};

class RetrievalDatabase {
public:
    RetrievalDatabase() = default;

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::size_t dim() const { return dim_; }
    const std::vector<DatabaseEntry>& entries() const { return entries_; }

    // Throws IngestionError on a duplicate id, wrong width or non-unit feature.
    void add(DatabaseEntry entry);

    // Cosine top-n, ties by ascending id. Throws QueryError when n is zero or
    // exceeds the database size, or the query width differs.
    RetrievalResult query_topn(std::span<const float> q, std::size_t n, Id query_id = 0) const;

    // Writes <path> (JSON manifest) and the feature blob next to it.
    void save(const std::filesystem::path& manifest) const;
    static RetrievalDatabase load(const std::filesystem::path& manifest);

    // CRC-32 of the feature blob as written to disk.
    std::uint32_t checksum() const;

    // Which encoder produced the features; stored in the manifest.
    aggregation::Modality modality() const { return modality_; }
    void set_modality(aggregation::Modality m) { modality_ = m; }

private:
    std::vector<DatabaseEntry> entries_;
    std::unordered_map<Id, std::size_t> index_;
    std::size_t dim_ = 0;
    aggregation::Modality modality_ = aggregation::Modality::Cloud;
    std::vector<float> packed_;  // size x dim, in insertion order
};

// Pairs each feature with the pose of the same id. Throws IngestionError when
// the id sets differ or an id repeats.
RetrievalDatabase build_database(std::span<const aggregation::GlobalFeature> features,
                                 std::span<const PoseRecord> poses);

RetrievalResult query_topn(const RetrievalDatabase& db, const aggregation::GlobalFeature& q, std::size_t n);

class PoseTable {
public:
    PoseTable() = default;
    explicit PoseTable(std::span<const PoseRecord> poses);
    const PoseRecord& at(Id id) const;  // EvaluationError when missing
    bool contains(Id id) const { return map_.count(id) != 0; }

private:
    std::unordered_map<Id, PoseRecord> map_;
};

double recall_at_n(std::span<const RetrievalResult> results, const PoseTable& poses, double eta_m, std::size_t n);

struct SweepPoint {
    double threshold = 0;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

// One point per distinct top-1 similarity, descending threshold.
std::vector<SweepPoint> pr_curve(std::span<const RetrievalResult> results, const PoseTable& poses, double eta_m);

struct F1Result {
    double f1 = 0;
    double threshold = 0;
};

// Maximum F1 over the sweep; the highest threshold wins ties.
F1Result max_f1(std::span<const RetrievalResult> results, const PoseTable& poses, double eta_m);

struct Split {
    std::vector<Id> queries;
    std::vector<Id> database;
};

// The first pose is a query; later poses become queries once the arc length
// walked since the previous query reaches spacing_m.
Split split_query_database(std::span<const PoseRecord> poses, double spacing_m = 3.0);

struct MetricsReport {
    std::vector<std::pair<std::size_t, double>> recall;  // (N, Recall@N)
    F1Result f1;
    std::vector<SweepPoint> curve;
};

MetricsReport evaluate(std::span<const RetrievalResult> results, const PoseTable& poses, double eta_m,
                       std::span<const std::size_t> topn);

// `metric,N,value` rows.
std::string metrics_csv(const MetricsReport& r);
// `threshold,precision,recall` rows.
std::string pr_csv(const std::vector<SweepPoint>& curve);

}  // namespace i2p::evaluation
