#pragma once

#include "facd/nn.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace facd::score {

using ad::Mat;
using ad::Var;
using nn::json;
using Vec = Eigen::VectorXd;

// Unbiased linear-kernel MMD^2 between the row sets of a and b. May be negative.
double linear_mmd2_unbiased(const Mat& a, const Mat& b);

// Pairwise weight making the MMD^2 a label-weighted double sum; s = 1 marks the anomaly group.
double discrete_gamma(int si, int sj, double m, double n);

enum class GammaVariant {
    sign_consistent,  // cross terms negated so all four corners agree with discrete_gamma
    as_printed,
};

GammaVariant parse_variant(std::string_view name);
std::string to_string(GammaVariant v);

// Continuous relaxation over soft scores in (0,1). m counts inliers, n anomalies.
double gamma_c(double pi, double pj, double m, double n, GammaVariant variant);

// -sum_{i != j} k(d_i, d_j) gamma_c(p_i, p_j) with n = sum(p), m = N - n.
double scorer_loss(const Mat& deviations, const Vec& p, GammaVariant variant);
// Same objective with the population sizes held fixed, differentiable in p.
// gram must already have a zero diagonal.
Var scorer_loss_var(const Mat& gram, const Var& p, double m, double n, GammaVariant variant);

struct ScorerConfig {
    std::vector<int> hidden{512, 256};
    nn::AdamConfig adam;
    GammaVariant variant = GammaVariant::sign_consistent;
    double eta = 1e-4;
    int steps_per_epoch = 10;
    int max_epochs = 100;
    int min_epochs = 3;  // completed epochs before the stopping rule may fire
    double tolerance = 0.5;  // |delta n~| stopping rule
    bool center = true;
    int warm_start_steps = 200;
    double collapse_threshold = 1e-3;

    void validate() const;
};

nn::MlpSpec scorer_spec(int n_features, const std::vector<int>& hidden);

struct ScorerModel {
    nn::Mlp net;
    Eigen::RowVectorXd center;  // subtracted from deviations before the network
    bool flipped = false;       // output read as 1 - sigmoid
    double eta = 1e-4;

    // Oriented logits, monotone in the score and free of clamping ties.
    Vec logits(const Mat& deviations) const;
    Vec scores(const Mat& deviations) const;

    json to_json() const;
    static ScorerModel from_json(const json& j);
};

struct ScoreVector {
    Vec p;       // clamped to [eta, 1 - eta]
    Vec logit;   // ranking key
    double n_tilde = 0;
    double m_tilde = 0;
};

struct ScorerResult {
    ScoreVector scores;
    ScorerModel model;
    int epochs = 0;
    bool collapsed = false;
    std::string diagnostics;
    std::vector<double> n_trace;  // n~ after each epoch
};

ScorerResult train_scorer(const Mat& deviations, const ScorerConfig& cfg, std::uint64_t seed);

struct ThresholdRule {
    enum class Kind { quantile, count, absolute };
    Kind kind = Kind::absolute;
    double value = 0.5;

    static ThresholdRule parse(std::string_view text);  // "quantile:0.9", "count:150", "absolute:0.5"
    std::string str() const;
};

std::vector<std::uint8_t> label_by_threshold(const Vec& p, const ThresholdRule& rule);
// Indices of the k largest entries, ties broken toward the earlier index.
std::vector<std::size_t> top_k(const Vec& scores, std::size_t k);

struct TrendSpec {
    int dim = 4;
    double mean_gap = 2.0;      // ||mu|| between inliers and anomalies
    double shift_norm = 5.0;    // common offset b
    double shift_sigma = 1.0;   // per-instance spread of the shift
    double ratio = 3.0;         // C = m / n
    double epsilon = 0.5;
    int trials = 200;
    std::vector<int> n_grid{50, 100, 200};
    std::uint64_t seed = 0;
};

struct TrendRow {
    int n = 0;
    int m = 0;
    double rate = 0;
    double lo = 0;  // 95% Wilson interval
    double hi = 0;
    double mean_statistic = 0;
};

// Monte-Carlo exceedance rate of |MMD^2(shifted) - MMD^2(clean)| >= epsilon.
std::vector<TrendRow> shift_deviation_trend(const TrendSpec& spec);

std::pair<double, double> wilson_interval(int successes, int trials, double z = 1.96);

json scorer_config_to_json(const ScorerConfig& c);
ScorerConfig scorer_config_from_json(const json& j);

}  // namespace facd::score
