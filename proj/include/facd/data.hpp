#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace facd::data {

using Mat = Eigen::MatrixXd;

inline constexpr const char* kUnknownLabel = "unknown";

struct ExpressionMatrix {
    Mat values;  // instances x features
    std::vector<std::string> feature_names;
    std::vector<std::string> instance_ids;
    std::vector<std::string> labels;  // empty when the source carries no labels

    Eigen::Index size() const { return values.rows(); }
    Eigen::Index features() const { return values.cols(); }
    bool labeled() const { return !labels.empty(); }
    // Throws DataError on non-finite entries or inconsistent metadata.
    void validate() const;
};

struct DatasetBundle {
    ExpressionMatrix reference;
    std::vector<ExpressionMatrix> targets;
    std::vector<int> domain_ids;  // one per target, in [0, targets.size())

    std::size_t n_targets() const { return targets.size(); }
    void validate() const;
};

// One-hot target-domain indicator; all zeros denotes the reference domain.
class DomainVector {
public:
    static DomainVector reference(std::size_t n_targets);
    static DomainVector target(std::size_t domain, std::size_t n_targets);

    bool is_reference() const;
    // -1 for the reference domain.
    int index() const;
    const std::vector<std::uint8_t>& one_hot() const { return one_hot_; }

private:
    std::vector<std::uint8_t> one_hot_;
};

// Labels of instances that do not occur among reference labels mark anomalies.
bool is_anomaly_label(const std::string& label, const std::vector<std::string>& reference_labels);

struct ManifestEntry {
    std::filesystem::path path;
    bool reference = false;
    int domain_id = -1;
    std::optional<std::string> label_column;
    std::optional<std::string> id_column;
};

enum class ColumnKind { continuous, categorical, exclude };

struct ColumnSchema {
    std::string name;
    ColumnKind kind = ColumnKind::continuous;
};

struct Manifest {
    std::vector<ManifestEntry> files;
    std::vector<ColumnSchema> schema;  // empty: every feature column is numeric
};

Manifest read_manifest(const std::filesystem::path& path);

// Raw string table as read from a CSV file.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

Table read_csv_table(const std::filesystem::path& path);
void write_csv_table(const std::filesystem::path& path, const Table& table);

DatasetBundle load_csv(const std::filesystem::path& manifest_path);
DatasetBundle load_csv(const Manifest& manifest, const std::filesystem::path& base_dir);

void write_csv(const std::filesystem::path& path, const ExpressionMatrix& m);
ExpressionMatrix read_matrix_csv(const std::filesystem::path& path,
                                 const std::optional<std::string>& label_column = std::nullopt,
                                 const std::optional<std::string>& id_column = std::nullopt);
// Writes one CSV per dataset plus a manifest.json describing them.
void write_bundle(const std::filesystem::path& dir, const DatasetBundle& bundle);

struct PreprocessConfig {
    bool normalize_total = false;
    bool log1p = false;
    int top_k = 0;  // 0 keeps all features
};

DatasetBundle preprocess(const DatasetBundle& bundle, const PreprocessConfig& cfg);

struct EncodeReport {
    std::vector<std::string> warnings;
};

struct EncodedTables {
    ExpressionMatrix reference;
    std::vector<ExpressionMatrix> targets;
    EncodeReport report;
};

struct LabeledTable {
    Table table;
    std::vector<std::string> instance_ids;
    std::vector<std::string> labels;
};

// One-hot categoricals, min-max continuous columns using reference statistics.
EncodedTables encode_mixed(const LabeledTable& reference, const std::vector<LabeledTable>& targets,
                           const std::vector<ColumnSchema>& schema);

struct SyntheticSpec {
    int n_normal_types = 3;
    int n_anomaly_subtypes = 3;
    int n_domains = 2;  // target datasets
    double content_separation = 10.0;
    double domain_shift_magnitude = 5.0;
    double noise_sigma = 1.0;
    int n_features = 32;
    int reference_size = 800;
    std::vector<int> target_sizes{600, 600};
    std::vector<double> anomaly_ratios{0.25, 0.25};
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticTruth {
    Mat prototypes;  // (normal types + anomaly subtypes) x features
    Mat offsets;     // targets x features
};

std::string normal_label(int type);
std::string anomaly_label(int subtype);

DatasetBundle synth_generate(const SyntheticSpec& spec);
DatasetBundle synth_generate(const SyntheticSpec& spec, SyntheticTruth& truth);

}  // namespace facd::data
