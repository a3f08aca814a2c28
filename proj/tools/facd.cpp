// facd command-line front end.
#include "facd/config.hpp"
#include "facd/errors.hpp"
#include "facd/pipeline.hpp"
#include "facd/plot.hpp"
#include "facd/verify.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace facd;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string threshold_rule;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "TOML or JSON run configuration");
    cmd->add_option("--seed", c.seed, "run seed (overrides the configuration)");
    cmd->add_option("--out", c.out, "run directory (default: $FACD_OUT_ROOT/<config digest>)");
    cmd->add_option("--threshold-rule", c.threshold_rule, "quantile:q, count:n or absolute:t");
}

fs::path out_root() {
    const char* env = std::getenv("FACD_OUT_ROOT");
    return env && *env ? fs::path(env) : fs::path("runs");
}

// Builds the run configuration. Stage commands fall back to the config.json of
// an existing run directory when no --config is given.
RunConfig resolve(const Common& c, bool reuse_run_config) {
    RunConfig cfg;
    if (!c.config.empty()) {
        cfg = load_config(c.config);
    } else if (reuse_run_config && !c.out.empty() && fs::exists(fs::path(c.out) / "config.json")) {
        cfg = config_from_json(pipeline::read_json(fs::path(c.out) / "config.json"));
    }
    if (c.seed) cfg.seed = *c.seed;
    if (!c.threshold_rule.empty()) cfg.threshold = score::ThresholdRule::parse(c.threshold_rule);
    if (!c.out.empty())
        cfg.out = c.out;
    else if (cfg.out == RunConfig{}.out)
        cfg.out = out_root() / config_digest(cfg);
    cfg.validate();
    return cfg;
}

void require_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("run directory " + dir.string() + " does not exist");
}

int cmd_synth(const Common& c) {
    const RunConfig cfg = resolve(c, false);
    const data::DatasetBundle bundle = data::synth_generate(cfg.synthetic_spec());
    data::write_bundle(cfg.out, bundle);
    std::cout << "wrote " << (cfg.out / "manifest.json").string() << '\n';
    return 0;
}

int cmd_detect(const Common& c) {
    const RunConfig cfg = resolve(c, false);
    fs::create_directories(cfg.out / "checkpoints");
    pipeline::write_json(cfg.out / "config.json", config_to_json(cfg));
    const auto bundle = pipeline::load_bundle(cfg);
    pipeline::write_truth(cfg.out / "truth.csv", pipeline::truth_rows(bundle));
    const auto det = pipeline::run_detect(cfg, bundle);
    pipeline::save_detect(cfg.out, det);
    std::cout << "scores: " << (cfg.out / "scores.csv").string() << '\n';
    return 0;
}

int cmd_adapt(const Common& c) {
    const RunConfig cfg = resolve(c, true);
    require_dir(cfg.out);
    const auto bundle = pipeline::load_bundle(cfg);
    const auto scores = pipeline::read_scores(cfg.out / "scores.csv");
    pipeline::save_adapt(cfg.out, pipeline::run_adapt(cfg, bundle, scores));
    std::cout << "adapted: " << (cfg.out / "adapted.csv").string() << '\n';
    return 0;
}

int cmd_annotate(const Common& c) {
    const RunConfig cfg = resolve(c, true);
    require_dir(cfg.out);
    const auto detector = pipeline::load_detector(cfg.out);
    const auto adapted = pipeline::load_adapt(cfg.out);
    pipeline::save_annotate(cfg.out, pipeline::run_annotate(cfg, detector, adapted));
    std::cout << "clusters: " << (cfg.out / "clusters.csv").string() << '\n';
    return 0;
}

int cmd_eval(const Common& c) {
    const RunConfig cfg = resolve(c, true);
    require_dir(cfg.out);
    const fs::path& d = cfg.out;
    const auto m = pipeline::evaluate(cfg, pipeline::read_truth(d / "truth.csv"), pipeline::read_scores(d / "scores.csv"),
                                      pipeline::read_clusters(d / "clusters.csv"),
                                      {{"detect", pipeline::read_json(d / "detect_report.json")},
                                       {"adapt", pipeline::read_json(d / "adapt_report.json")},
                                       {"annotate", pipeline::read_json(d / "annotation.json")}});
    pipeline::write_json(d / "metrics.json", m.to_json());
    std::cout << m.to_json().dump(2) << '\n';
    return 0;
}

int cmd_pipeline(const Common& c) {
    const RunConfig cfg = resolve(c, false);
    const auto res = pipeline::run_pipeline(cfg, true);
    std::cout << "run: " << cfg.out.string() << '\n';
    std::cout << "auc " << res.metrics.auc << "  f1 " << res.metrics.f1 << "  nmi " << res.metrics.nmi << "  f1*nmi "
              << res.metrics.f1_times_nmi << '\n';
    return 0;
}

int cmd_verify(const Common& c, bool fault, int trend_trials) {
    verify::VerifyOptions opt;
    opt.seed = c.seed.value_or(0);
    opt.inject_gamma_fault = fault;
    opt.trend_trials = trend_trials;
    const json report = verify::run_verify(opt);
    if (!c.out.empty()) pipeline::write_json(fs::path(c.out) / "verify.json", report);
    std::cout << report.dump(2) << '\n';
    return 0;
}

int cmd_plot(const std::string& run_dir, const std::string& out) {
    if (run_dir.empty()) throw ConfigError("plot needs a run directory (--run or --out)");
    require_dir(run_dir);
    const auto res = plot::plot_run(run_dir, out);
    for (const auto& p : res.written) std::cout << "wrote " << p.string() << '\n';
    for (const auto& n : res.notices) std::cout << "notice: " << n << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fine-grained anomaly detection across shifted datasets"};
    app.require_subcommand(1);

    Common common;
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset bundle");
    auto* detect = app.add_subcommand("detect", "train the detector and score target instances");
    auto* adapt = app.add_subcommand("adapt", "align flagged instances to the reference domain");
    auto* annotate = app.add_subcommand("annotate", "cluster adapted anomalies into subtypes");
    auto* pipe = app.add_subcommand("pipeline", "run every stage end to end");
    auto* verify = app.add_subcommand("verify", "run the property and oracle suite");
    auto* eval = app.add_subcommand("eval", "recompute metrics for a run directory");
    auto* plot = app.add_subcommand("plot", "render figures for a run directory");
    for (auto* cmd : {synth, detect, adapt, annotate, pipe, verify, eval}) add_common(cmd, common);

    bool fault = false;
    int trend_trials = 200;
    verify->add_flag("--inject-gamma-fault", fault)->group("");  // test hook, hidden from help
    verify->add_option("--trend-trials", trend_trials, "Monte-Carlo trials per sample size");

    std::string run_dir, plot_out;
    plot->add_option("run_dir", run_dir, "run directory");
    plot->add_option("--run", run_dir, "run directory");
    plot->add_option("--out", plot_out, "figure directory (default: the run directory)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*synth) return cmd_synth(common);
        if (*detect) return cmd_detect(common);
        if (*adapt) return cmd_adapt(common);
        if (*annotate) return cmd_annotate(common);
        if (*pipe) return cmd_pipeline(common);
        if (*verify) return cmd_verify(common, fault, trend_trials);
        if (*eval) return cmd_eval(common);
        if (*plot) return cmd_plot(run_dir, plot_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
