#include "facd/config.hpp"

#include "facd/errors.hpp"

#include <toml.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace facd {

namespace fs = std::filesystem;

namespace {

// Reads keys from one JSON object and rejects whatever was not consumed.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be a table");
    }

    template <class T>
    void get(const std::string& key, T& out) {
        if (!j_.contains(key)) return;
        used_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key '" + name(key) + "' has the wrong type");
        }
    }

    bool has(const std::string& key) const { return j_.contains(key); }
    const json& raw(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    std::optional<Section> sub(const std::string& key) {
        if (!j_.contains(key)) return std::nullopt;
        used_.insert(key);
        return Section(j_.at(key), name(key));
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) throw ConfigError("unknown config key '" + name(it.key()) + "'");
    }

private:
    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

detect::EnqueueMode parse_enqueue(const std::string& s) {
    if (s == "embedding") return detect::EnqueueMode::embedding;
    if (s == "reconstruction") return detect::EnqueueMode::reconstruction;
    throw ConfigError("unknown memory enqueue mode '" + s + "'");
}

NmiScope parse_scope(const std::string& s) {
    if (s == "true_anomalies") return NmiScope::true_anomalies;
    if (s == "all_flagged") return NmiScope::all_flagged;
    throw ConfigError("unknown nmi_scope '" + s + "'");
}

std::string scope_name(NmiScope s) { return s == NmiScope::true_anomalies ? "true_anomalies" : "all_flagged"; }

}  // namespace

void RunConfig::validate() const {
    if (!data.manifest) synthetic_spec().validate();
    if (data.preprocess.top_k < 0) throw ConfigError("preprocess.top_k must be nonnegative");
    phase1.validate();
    scorer.validate();
    if (phase2.enabled) phase2.adapter.validate();
    phase3.annotator.validate();
    if (phase3.k < 0) throw ConfigError("phase3.k must be positive or \"infer\"");
}

data::SyntheticSpec RunConfig::synthetic_spec() const {
    data::SyntheticSpec s = data.synthetic;
    if (data.synthetic_seed_from_run) s.seed = seed;
    return s;
}

RunConfig config_from_json(const json& j, const fs::path& base_dir) {
    RunConfig c;
    Section top(j, "");
    top.get("seed", c.seed);
    std::string out;
    top.get("out", out);
    if (!out.empty()) c.out = out;
    std::string rule;
    top.get("threshold", rule);
    if (!rule.empty()) c.threshold = score::ThresholdRule::parse(rule);

    if (auto d = top.sub("data")) {
        std::string manifest;
        d->get("manifest", manifest);
        if (!manifest.empty()) {
            fs::path p(manifest);
            c.data.manifest = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        }
        if (auto s = d->sub("synthetic")) {
            auto& sp = c.data.synthetic;
            s->get("n_normal_types", sp.n_normal_types);
            s->get("n_anomaly_subtypes", sp.n_anomaly_subtypes);
            s->get("n_domains", sp.n_domains);
            s->get("content_separation", sp.content_separation);
            s->get("domain_shift_magnitude", sp.domain_shift_magnitude);
            s->get("noise_sigma", sp.noise_sigma);
            s->get("n_features", sp.n_features);
            s->get("reference_size", sp.reference_size);
            if (s->has("n_domains") && !s->has("target_sizes"))
                sp.target_sizes.assign(static_cast<std::size_t>(std::max(0, sp.n_domains)), 600);
            if (s->has("n_domains") && !s->has("anomaly_ratios"))
                sp.anomaly_ratios.assign(static_cast<std::size_t>(std::max(0, sp.n_domains)), 0.25);
            s->get("target_sizes", sp.target_sizes);
            s->get("anomaly_ratios", sp.anomaly_ratios);
            if (s->has("seed")) {
                s->get("seed", sp.seed);
                c.data.synthetic_seed_from_run = false;
            }
            s->finish();
        }
        if (auto p = d->sub("preprocess")) {
            p->get("normalize_total", c.data.preprocess.normalize_total);
            p->get("log1p", c.data.preprocess.log1p);
            p->get("top_k", c.data.preprocess.top_k);
            p->finish();
        }
        d->finish();
    }

    if (auto s = top.sub("phase1")) {
        auto& p = c.phase1;
        s->get("encoder", p.encoder);
        s->get("critic", p.critic);
        s->get("epochs", p.epochs);
        s->get("batch_size", p.batch_size);
        s->get("critic_steps", p.critic_steps);
        s->get("learning_rate", p.adam.learning_rate);
        s->get("alpha", p.weights.alpha);
        s->get("beta", p.weights.beta);
        s->get("lambda", p.weights.lambda);
        if (auto m = s->sub("memory")) {
            m->get("enabled", p.memory.enabled);
            m->get("size", p.memory.size);
            m->get("tau", p.memory.tau);
            std::string mode;
            m->get("enqueue", mode);
            if (!mode.empty()) p.memory.enqueue = parse_enqueue(mode);
            m->get("strict", p.memory.strict);
            m->finish();
        }
        s->finish();
    }

    if (auto s = top.sub("scorer")) {
        auto& p = c.scorer;
        s->get("hidden", p.hidden);
        s->get("learning_rate", p.adam.learning_rate);
        std::string variant;
        s->get("variant", variant);
        if (!variant.empty()) p.variant = score::parse_variant(variant);
        s->get("eta", p.eta);
        s->get("steps_per_epoch", p.steps_per_epoch);
        s->get("max_epochs", p.max_epochs);
        s->get("min_epochs", p.min_epochs);
        s->get("tolerance", p.tolerance);
        s->get("center", p.center);
        s->get("warm_start_steps", p.warm_start_steps);
        s->get("collapse_threshold", p.collapse_threshold);
        s->finish();
    }

    if (auto s = top.sub("phase2")) {
        auto& p = c.phase2.adapter;
        s->get("enabled", c.phase2.enabled);
        s->get("encoder", p.encoder);
        s->get("critic", p.critic);
        s->get("epochs", p.epochs);
        s->get("batch_size", p.batch_size);
        s->get("critic_steps", p.critic_steps);
        s->get("learning_rate", p.adam.learning_rate);
        s->get("alpha", p.weights.alpha);
        s->get("beta", p.weights.beta);
        s->get("lambda", p.weights.lambda);
        s->get("pool_size", p.pool_size);
        std::string kin;
        s->get("kin_space", kin);
        if (kin == "literal") p.kin_space = adapt::KinSpace::literal;
        else if (kin == "centered" || kin.empty()) p.kin_space = adapt::KinSpace::centered;
        else throw ConfigError("unknown kin_space '" + kin + "'");
        s->get("include_reference", p.include_reference);
        s->finish();
    }

    if (auto s = top.sub("phase3")) {
        auto& p = c.phase3.annotator;
        if (s->has("k")) {
            const json& k = s->raw("k");
            if (k.is_string() && k.get<std::string>() == "infer") c.phase3.k = 0;
            else if (k.is_number_integer() && k.get<int>() >= 1) c.phase3.k = k.get<int>();
            else throw ConfigError("phase3.k must be a positive integer or \"infer\"");
        }
        s->get("dim", p.dim);
        s->get("heads", p.heads);
        s->get("nu", p.nu);
        s->get("learning_rate", p.adam.learning_rate);
        s->get("max_iterations", p.max_iterations);
        s->get("change_tolerance", p.change_tolerance);
        s->get("kmeans_restarts", p.kmeans_restarts);
        s->get("q_floor", p.q_floor);
        s->get("eigengap_cap", p.eigengap_cap);
        std::string conv;
        s->get("convention", conv);
        if (!conv.empty()) p.convention = annot::parse_convention(conv);
        s->finish();
    }

    if (auto s = top.sub("eval")) {
        std::string scope;
        s->get("nmi_scope", scope);
        if (!scope.empty()) c.nmi_scope = parse_scope(scope);
        s->finish();
    }
    top.finish();
    c.validate();
    return c;
}

RunConfig parse_config(const std::string& text, const fs::path& base_dir) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
        return config_from_json(j, base_dir);
    }
    toml::table table;
    try {
        table = toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "config is not valid TOML: " << e.description() << " at line " << e.source().begin.line;
        throw ConfigError(msg.str());
    }
    std::ostringstream as_json;
    as_json << toml::json_formatter{table};
    return config_from_json(json::parse(as_json.str()), base_dir);
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.parent_path());
}

json config_to_json(const RunConfig& c) {
    const data::SyntheticSpec sp = c.synthetic_spec();
    json data_j{{"preprocess",
                 {{"normalize_total", c.data.preprocess.normalize_total},
                  {"log1p", c.data.preprocess.log1p},
                  {"top_k", c.data.preprocess.top_k}}}};
    if (c.data.manifest) {
        data_j["manifest"] = c.data.manifest->generic_string();
    } else {
        data_j["synthetic"] = {{"n_normal_types", sp.n_normal_types},
                               {"n_anomaly_subtypes", sp.n_anomaly_subtypes},
                               {"n_domains", sp.n_domains},
                               {"content_separation", sp.content_separation},
                               {"domain_shift_magnitude", sp.domain_shift_magnitude},
                               {"noise_sigma", sp.noise_sigma},
                               {"n_features", sp.n_features},
                               {"reference_size", sp.reference_size},
                               {"target_sizes", sp.target_sizes},
                               {"anomaly_ratios", sp.anomaly_ratios},
                               {"seed", sp.seed}};
    }
    const auto& p1 = c.phase1;
    json phase1{{"encoder", p1.encoder},
                {"critic", p1.critic},
                {"epochs", p1.epochs},
                {"batch_size", p1.batch_size},
                {"critic_steps", p1.critic_steps},
                {"learning_rate", p1.adam.learning_rate},
                {"alpha", p1.weights.alpha},
                {"beta", p1.weights.beta},
                {"lambda", p1.weights.lambda},
                {"memory",
                 {{"enabled", p1.memory.enabled},
                  {"size", p1.memory.size},
                  {"tau", p1.memory.tau},
                  {"enqueue", p1.memory.enqueue == detect::EnqueueMode::embedding ? "embedding" : "reconstruction"},
                  {"strict", p1.memory.strict}}}};
    json phase2 = adapt::adapter_config_to_json(c.phase2.adapter);
    phase2["enabled"] = c.phase2.enabled;
    json phase3 = annot::annotator_config_to_json(c.phase3.annotator);
    phase3["k"] = c.phase3.k > 0 ? json(c.phase3.k) : json("infer");
    return json{{"seed", c.seed},
                {"out", c.out.generic_string()},
                {"threshold", c.threshold.str()},
                {"data", data_j},
                {"phase1", phase1},
                {"scorer", score::scorer_config_to_json(c.scorer)},
                {"phase2", phase2},
                {"phase3", phase3},
                {"eval", {{"nmi_scope", scope_name(c.nmi_scope)}}}};
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_digest(const RunConfig& cfg) {
    json j = config_to_json(cfg);
    j.erase("out");  // where a run is written does not change what it computes
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

}  // namespace facd
