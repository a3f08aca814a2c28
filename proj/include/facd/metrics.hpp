#pragma once

#include <json.hpp>

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace facd::metrics {

using json = nlohmann::json;

// Mann-Whitney AUC; tied pairs count one half.
double auc(const Eigen::VectorXd& scores, const std::vector<std::uint8_t>& labels);
// Flags as many top scores as there are positives (stable tie-break) and
// returns the F1 of that selection.
double f1_oracle_threshold(const Eigen::VectorXd& scores, const std::vector<std::uint8_t>& labels);
double f1_score(const std::vector<std::uint8_t>& predicted, const std::vector<std::uint8_t>& truth);
// Mutual information over the arithmetic mean of the two entropies.
double nmi(const std::vector<int>& a, const std::vector<int>& b);
// Silhouette coefficient averaged over points, Euclidean distance.
double silhouette(const Eigen::MatrixXd& x, const std::vector<int>& labels);

struct MetricsReport {
    double auc = 0;
    double f1 = 0;
    double nmi = 0;
    double f1_times_nmi = 0;
    std::uint64_t seed = 0;
    std::string config_digest;
    json extra = json::object();  // stage details merged into the JSON output

    void set(double auc_v, double f1_v, double nmi_v);
    json to_json() const;
};

// One row per metric with mean and sample standard deviation over runs.
void write_aggregate_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& runs);
std::string mean_std(const std::vector<double>& v, int digits = 2);  // "0.53(0.03)"

}  // namespace facd::metrics
