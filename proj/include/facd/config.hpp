#pragma once

#include "facd/adapter.hpp"
#include "facd/annotator.hpp"
#include "facd/data.hpp"
#include "facd/detector.hpp"
#include "facd/scorer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace facd {

using json = nlohmann::json;

enum class NmiScope {
    true_anomalies,  // flagged instances that are true anomalies, against their subtypes
    all_flagged,     // every flagged instance; false positives form their own class
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out = "runs/default";

    struct Data {
        std::optional<std::filesystem::path> manifest;  // absent: synthetic
        data::SyntheticSpec synthetic;
        bool synthetic_seed_from_run = true;  // synthetic.seed follows the run seed unless set
        data::PreprocessConfig preprocess;
    } data;

    detect::DetectorConfig phase1;
    score::ScorerConfig scorer;
    score::ThresholdRule threshold;

    struct Phase2 {
        bool enabled = true;
        adapt::AdapterConfig adapter;
    } phase2;

    struct Phase3 {
        int k = 0;  // 0 infers the count
        annot::AnnotatorConfig annotator;
    } phase3;

    NmiScope nmi_scope = NmiScope::true_anomalies;

    void validate() const;
    // Synthetic spec with the seed rule applied.
    data::SyntheticSpec synthetic_spec() const;
};

// Parses TOML, or JSON when the text starts with '{'. Relative manifest paths
// resolve against base_dir. Unknown keys raise ConfigError.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);
RunConfig config_from_json(const json& j, const std::filesystem::path& base_dir = {});
// Fully expanded canonical form, including every default.
json config_to_json(const RunConfig& cfg);
// FNV-1a 64 over the canonical JSON, as 16 hex digits.
std::string config_digest(const RunConfig& cfg);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace facd
