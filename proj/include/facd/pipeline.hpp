#pragma once

#include "facd/config.hpp"
#include "facd/metrics.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace facd::pipeline {

using ad::Mat;

data::DatasetBundle load_bundle(const RunConfig& cfg);

struct ScoreRow {
    int dataset = 0;
    std::string id;
    double score = 0;  // clamped probability
    double logit = 0;  // ranking key
    bool flagged = false;
};

struct ClusterRow {
    int dataset = 0;
    std::string id;
    int subtype = 0;
    double confidence = 0;
};

struct TruthRow {
    int dataset = 0;
    std::string id;
    std::string label;
    bool anomaly = false;
};

struct DetectOutput {
    detect::Detector detector;
    std::vector<score::ScorerModel> scorers;  // one per target dataset
    std::vector<ScoreRow> scores;
    json report;
};

struct AdaptOutput {
    std::optional<adapt::Adapter> adapter;  // empty when adaptation is disabled
    Mat xi;                                 // adapted flagged instances, in score-row order
    std::vector<int> domains;
    std::vector<std::string> ids;
    json report;
};

struct AnnotateOutput {
    annot::AnnotatorResult result;
    std::vector<ClusterRow> clusters;
    Mat embedding2d;  // first two principal components of the fused embeddings
    json report;
};

std::vector<TruthRow> truth_rows(const data::DatasetBundle& bundle);

DetectOutput run_detect(const RunConfig& cfg, const data::DatasetBundle& bundle);
AdaptOutput run_adapt(const RunConfig& cfg, const data::DatasetBundle& bundle, const std::vector<ScoreRow>& scores);
AnnotateOutput run_annotate(const RunConfig& cfg, const detect::Detector& detector, const AdaptOutput& adapted);
// reports holds the per-stage JSON reports keyed by stage name.
metrics::MetricsReport evaluate(const RunConfig& cfg, const std::vector<TruthRow>& truth, const std::vector<ScoreRow>& scores,
                                const std::vector<ClusterRow>& clusters, const std::map<std::string, json>& reports);

struct PipelineResult {
    metrics::MetricsReport metrics;
    DetectOutput detect;
    AdaptOutput adapt;
    AnnotateOutput annotate;
    std::vector<TruthRow> truth;
    std::map<std::string, double> timings;  // seconds per stage
};

// Runs detect, exclude, adapt, annotate and evaluate. Artifacts go to cfg.out
// when write is set.
PipelineResult run_pipeline(const RunConfig& cfg, bool write = true);

// Artifact input and output.
void write_scores(const std::filesystem::path& path, const std::vector<ScoreRow>& rows);
std::vector<ScoreRow> read_scores(const std::filesystem::path& path);
void write_clusters(const std::filesystem::path& path, const std::vector<ClusterRow>& rows);
std::vector<ClusterRow> read_clusters(const std::filesystem::path& path);
void write_truth(const std::filesystem::path& path, const std::vector<TruthRow>& rows);
std::vector<TruthRow> read_truth(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

// Stage artifacts written into a run directory.
void save_detect(const std::filesystem::path& dir, const DetectOutput& out);
void save_adapt(const std::filesystem::path& dir, const AdaptOutput& out);
void save_annotate(const std::filesystem::path& dir, const AnnotateOutput& out);
detect::Detector load_detector(const std::filesystem::path& dir);
AdaptOutput load_adapt(const std::filesystem::path& dir);

}  // namespace facd::pipeline
