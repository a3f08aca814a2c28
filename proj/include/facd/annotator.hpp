#pragma once

#include "facd/detector.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace facd::annot {

using ad::Mat;
using ad::Var;
using nn::json;

// Delta = Xi - reconstruction of Xi by the phase I detector, memory path active.
Mat post_adaptation_deviation(const detect::Detector& detector, const Mat& xi);

class FusionBlock {
public:
    FusionBlock() = default;
    FusionBlock(int n_features, int dim, int heads, std::uint64_t seed);

    // Queries from xi, keys and values from delta. When attention is given it
    // receives one weight matrix per head.
    Var forward(const Var& xi, const Var& delta, std::vector<Mat>* attention = nullptr) const;
    Mat forward(const Mat& xi, const Mat& delta) const;

    nn::ParamList parameters() const;
    int dim() const { return dim_; }
    int heads() const { return heads_; }

    nn::Linear wq, wk, wv, wpsi, ffn_in, ffn_out;
    nn::LayerNorm ln1, ln2;

private:
    int dim_ = 0;
    int heads_ = 1;
};

// Cauchy-kernel soft assignment, rows normalized.
Var soft_assign(const Var& z, const Var& centroids, double nu);
Mat soft_assign(const Mat& z, const Mat& centroids, double nu);
// Sharpened auxiliary distribution; throws naming the cluster if a column is empty.
Mat target_distribution(const Mat& q);
// sum p log(p / max(q, floor)), with 0 log 0 = 0.
Var clustering_loss(const Mat& p, const Var& q, double floor = 1e-12);
double clustering_loss(const Mat& p, const Mat& q, double floor = 1e-12);

struct KMeansResult {
    Mat centroids;
    std::vector<int> labels;
    double inertia = 0;
};

KMeansResult kmeans(const Mat& x, int k, int restarts, std::uint64_t seed, int max_iter = 300);

enum class EigengapConvention {
    spectral_gap,   // descending eigenvalues, K = position of the largest drop
    literal_index,  // ascending eigenvalues, K = index i of the largest rise
};

EigengapConvention parse_convention(std::string_view name);
std::string to_string(EigengapConvention c);

struct EigengapResult {
    int k = 1;
    std::vector<double> eigenvalues;  // descending
    bool degenerate = false;          // all embeddings collinear
};

EigengapResult infer_cluster_count(const Mat& z, EigengapConvention convention = EigengapConvention::spectral_gap,
                                   int cap = 50);

struct AnnotatorConfig {
    int dim = 256;
    int heads = 2;
    double nu = 1.0;
    nn::AdamConfig adam;
    int max_iterations = 200;
    double change_tolerance = 0.001;
    int kmeans_restarts = 20;
    double q_floor = 1e-12;
    int eigengap_cap = 50;
    EigengapConvention convention = EigengapConvention::spectral_gap;

    void validate() const;
};

struct ClusterState {
    Mat z;          // fused embeddings
    Mat centroids;
    Mat q;
    Mat p;
    double nu = 1.0;
};

struct AnnotatorResult {
    std::vector<int> labels;
    std::vector<double> confidence;  // max soft assignment per instance
    ClusterState state;
    int k = 0;
    bool inferred = false;
    EigengapResult eigengap;
    int iterations = 0;
    std::vector<double> change_trace;  // fraction of hard assignments changed per iteration
    FusionBlock fusion;
};

// k <= 0 infers the cluster count from the initial fused embeddings.
AnnotatorResult train_annotator(const Mat& xi, const Mat& delta, int k, const AnnotatorConfig& cfg, std::uint64_t seed);

json annotator_config_to_json(const AnnotatorConfig& c);
AnnotatorConfig annotator_config_from_json(const json& j);

}  // namespace facd::annot
