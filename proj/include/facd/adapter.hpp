#pragma once

#include "facd/detector.hpp"

#include <cstdint>
#include <vector>

namespace facd::adapt {

using ad::Mat;
using ad::Var;
using nn::json;

enum class KinSpace {
    centered,  // each dataset's mean embedding moved onto the reference mean before the search
    literal,   // raw encoder embeddings
};

struct AdapterConfig {
    std::vector<int> encoder{512, 256, 256, 256, 256, 256};
    std::vector<int> critic{512, 64, 64, 64};
    detect::LossWeights weights;
    nn::AdamConfig adam;
    int epochs = 100;
    int batch_size = 256;
    int critic_steps = 1;
    int pool_size = 2048;
    KinSpace kin_space = KinSpace::centered;
    bool include_reference = true;  // reference rows train with b = 0 and x+ = x

    void validate() const;
};

// Per-dataset mean embeddings used by the centered kin search.
struct KinFrame {
    Eigen::RowVectorXd reference;
    std::vector<Eigen::RowVectorXd> targets;
};

class Adapter {
public:
    Adapter() = default;
    Adapter(int n_features, int n_targets, AdapterConfig cfg, std::uint64_t seed);

    // domains[i] = -1 for the reference, otherwise the target index.
    Var adapt(const Var& x, const std::vector<int>& domains) const;
    Mat adapt(const Mat& x, const std::vector<int>& domains) const;
    Mat encode(const Mat& x) const;

    int n_features() const { return encoder.in_dim(); }
    int n_targets() const { return static_cast<int>(style.rows()); }
    nn::ParamList generator_parameters() const;

    AdapterConfig cfg;
    nn::Mlp encoder;
    nn::Mlp decoder;
    nn::Mlp critic;
    Var style;  // n_targets x latent
    KinFrame frame;

    json to_json() const;
    static Adapter from_json(const json& j);
};

struct KinResult {
    std::vector<std::size_t> index;  // into the pool
    double bandwidth = 1.0;
};

// Argmax over the pool of a Gaussian kernel on embeddings, bandwidth by the
// median pairwise distance within the queries. Ties go to the smallest index.
KinResult kin_match(const Mat& query_embeddings, const Mat& pool_embeddings);
double median_bandwidth(const Mat& embeddings);

// Embeddings placed in the kin-search space of the adapter's configuration.
Mat kin_query(const Adapter& model, const Mat& x, const std::vector<int>& domains);

struct TrainLog {
    std::vector<double> generator_loss;
    std::vector<double> critic_loss;
};

// targets hold the instances left after excluding detected anomalies.
Adapter train_phase2(const Mat& reference, const std::vector<Mat>& targets, const AdapterConfig& cfg, std::uint64_t seed,
                     TrainLog* log = nullptr);

Mat adapt_anomalies(const Adapter& model, const Mat& anomalies, const std::vector<int>& domains);

json adapter_config_to_json(const AdapterConfig& c);
AdapterConfig adapter_config_from_json(const json& j);

}  // namespace facd::adapt
