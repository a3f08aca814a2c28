#include "facd/pipeline.hpp"

#include "facd/errors.hpp"
#include "facd/rng.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

namespace facd::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConfigError& e) {
        throw ConfigError(name + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(name + ": " + e.what());
    } catch (const NumericError& e) {
        throw NumericError(name + ": " + e.what());
    }
}

std::size_t target_position(const data::DatasetBundle& b, int domain) {
    for (std::size_t k = 0; k < b.domain_ids.size(); ++k)
        if (b.domain_ids[k] == domain) return k;
    throw DataError("no target dataset with domain id " + std::to_string(domain));
}

std::unordered_map<std::string, Eigen::Index> id_index(const data::ExpressionMatrix& m) {
    std::unordered_map<std::string, Eigen::Index> out;
    for (std::size_t i = 0; i < m.instance_ids.size(); ++i) out.emplace(m.instance_ids[i], static_cast<Eigen::Index>(i));
    return out;
}

Mat gather(const Mat& x, const std::vector<Eigen::Index>& rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    return out;
}

double parse_double(const std::string& s, const fs::path& file) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("bad number '" + s + "' in " + file.string());
    return v;
}

int parse_int(const std::string& s, const fs::path& file) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("bad integer '" + s + "' in " + file.string());
    return v;
}

const std::vector<std::string>& require_header(const data::Table& t, const std::vector<std::string>& want, const fs::path& file) {
    if (t.header != want) throw DataError(file.string() + " does not have the expected columns");
    return t.header;
}

Mat principal_2d(const Mat& z) {
    if (z.rows() == 0) return Mat(0, 2);
    const Mat c = z.rowwise() - z.colwise().mean();
    Eigen::JacobiSVD<Mat> svd(c, Eigen::ComputeThinV);
    Mat v = svd.matrixV().leftCols(std::min<Eigen::Index>(2, svd.matrixV().cols()));
    // Fix the sign of each axis so its largest loading is positive.
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
        Eigen::Index arg = 0;
        v.col(j).cwiseAbs().maxCoeff(&arg);
        if (v(arg, j) < 0) v.col(j) *= -1.0;
    }
    Mat out = Mat::Zero(z.rows(), 2);
    out.leftCols(v.cols()) = c * v;
    return out;
}

}  // namespace

data::DatasetBundle load_bundle(const RunConfig& cfg) {
    data::DatasetBundle b = cfg.data.manifest ? data::load_csv(*cfg.data.manifest) : data::synth_generate(cfg.synthetic_spec());
    return data::preprocess(b, cfg.data.preprocess);
}

std::vector<TruthRow> truth_rows(const data::DatasetBundle& bundle) {
    std::vector<std::string> ref_labels = bundle.reference.labels;
    std::sort(ref_labels.begin(), ref_labels.end());
    ref_labels.erase(std::unique(ref_labels.begin(), ref_labels.end()), ref_labels.end());
    std::vector<TruthRow> out;
    for (std::size_t k = 0; k < bundle.targets.size(); ++k) {
        const auto& t = bundle.targets[k];
        for (std::size_t i = 0; i < t.instance_ids.size(); ++i) {
            TruthRow r;
            r.dataset = bundle.domain_ids[k];
            r.id = t.instance_ids[i];
            r.label = t.labeled() ? t.labels[i] : data::kUnknownLabel;
            r.anomaly = !ref_labels.empty() && data::is_anomaly_label(r.label, ref_labels);
            out.push_back(std::move(r));
        }
    }
    return out;
}

DetectOutput run_detect(const RunConfig& cfg, const data::DatasetBundle& bundle) {
    DetectOutput out;
    detect::TrainLog log;
    out.detector = detect::train_phase1(bundle.reference.values, cfg.phase1, derive_seed(cfg.seed, 1), &log);
    json datasets = json::array();
    for (std::size_t k = 0; k < bundle.targets.size(); ++k) {
        const auto& t = bundle.targets[k];
        const int domain = bundle.domain_ids[k];
        const Mat dev = detect::reconstruction_deviation(out.detector, t.values);
        score::ScorerResult res = score::train_scorer(dev, cfg.scorer, derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(domain)));
        const auto flags = score::label_by_threshold(res.scores.p, cfg.threshold);
        std::size_t flagged = 0;
        for (std::size_t i = 0; i < flags.size(); ++i) {
            out.scores.push_back({domain, t.instance_ids[i], res.scores.p(static_cast<Eigen::Index>(i)),
                                  res.scores.logit(static_cast<Eigen::Index>(i)), flags[i] != 0});
            flagged += flags[i];
        }
        json d{{"dataset", domain},
               {"instances", t.size()},
               {"flagged", flagged},
               {"scorer_epochs", res.epochs},
               {"n_tilde", res.scores.n_tilde},
               {"flipped", res.model.flipped},
               {"collapsed", res.collapsed}};
        if (res.collapsed) d["diagnostics"] = res.diagnostics;
        datasets.push_back(d);
        out.scorers.push_back(std::move(res.model));
    }
    out.report = json{{"threshold", cfg.threshold.str()},
                      {"phase1_epochs", cfg.phase1.epochs},
                      {"phase1_final_generator_loss", log.generator_loss.empty() ? json(nullptr) : json(log.generator_loss.back())},
                      {"phase1_final_critic_loss", log.critic_loss.empty() ? json(nullptr) : json(log.critic_loss.back())},
                      {"datasets", datasets}};
    return out;
}

AdaptOutput run_adapt(const RunConfig& cfg, const data::DatasetBundle& bundle, const std::vector<ScoreRow>& scores) {
    const std::size_t nt = bundle.targets.size();
    std::vector<std::unordered_map<std::string, Eigen::Index>> index;
    for (const auto& t : bundle.targets) index.push_back(id_index(t));
    std::vector<std::vector<std::uint8_t>> flagged(nt);
    for (std::size_t k = 0; k < nt; ++k) flagged[k].assign(static_cast<std::size_t>(bundle.targets[k].size()), 0);

    AdaptOutput out;
    std::vector<Eigen::Index> rows;
    std::vector<std::size_t> positions;
    for (const auto& s : scores) {
        const std::size_t k = target_position(bundle, s.dataset);
        const auto it = index[k].find(s.id);
        if (it == index[k].end()) throw DataError("scored instance " + s.id + " is not in dataset " + std::to_string(s.dataset));
        if (!s.flagged) continue;
        flagged[k][static_cast<std::size_t>(it->second)] = 1;
        out.ids.push_back(s.id);
        out.domains.push_back(s.dataset);
        rows.push_back(it->second);
        positions.push_back(k);
    }
    Mat raw(static_cast<Eigen::Index>(rows.size()), bundle.reference.features());
    for (std::size_t i = 0; i < rows.size(); ++i) raw.row(static_cast<Eigen::Index>(i)) = bundle.targets[positions[i]].values.row(rows[i]);

    out.report = json{{"enabled", cfg.phase2.enabled}, {"anomalies", rows.size()}};
    if (!cfg.phase2.enabled) {
        out.xi = raw;
        return out;
    }

    // Style rows are indexed by domain id.
    std::vector<Mat> kept(nt);
    for (std::size_t k = 0; k < nt; ++k) {
        std::vector<Eigen::Index> keep;
        for (std::size_t i = 0; i < flagged[k].size(); ++i)
            if (!flagged[k][i]) keep.push_back(static_cast<Eigen::Index>(i));
        kept[static_cast<std::size_t>(bundle.domain_ids[k])] = gather(bundle.targets[k].values, keep);
    }
    out.adapter = adapt::train_phase2(bundle.reference.values, kept, cfg.phase2.adapter, derive_seed(cfg.seed, 2));
    out.xi = adapt::adapt_anomalies(*out.adapter, raw, out.domains);

    // Diagnostics on true normals when labels are known.
    const auto truth = truth_rows(bundle);
    std::vector<Eigen::Index> ref_rows(static_cast<std::size_t>(bundle.reference.size()));
    for (std::size_t i = 0; i < ref_rows.size(); ++i) ref_rows[i] = static_cast<Eigen::Index>(i);
    std::vector<int> ndom;
    std::vector<std::string> nlab;
    Mat normals(0, bundle.reference.features());
    {
        std::vector<Mat> parts;
        std::size_t off = 0;
        for (std::size_t k = 0; k < nt; ++k) {
            std::vector<Eigen::Index> sel;
            for (Eigen::Index i = 0; i < bundle.targets[k].size(); ++i) {
                const auto& tr = truth[off + static_cast<std::size_t>(i)];
                if (tr.label != data::kUnknownLabel && !tr.anomaly) {
                    sel.push_back(i);
                    ndom.push_back(bundle.domain_ids[k]);
                    nlab.push_back(tr.label);
                }
            }
            parts.push_back(gather(bundle.targets[k].values, sel));
            off += static_cast<std::size_t>(bundle.targets[k].size());
        }
        Eigen::Index total = 0;
        for (const auto& p : parts) total += p.rows();
        normals.resize(total, bundle.reference.features());
        Eigen::Index r = 0;
        for (const auto& p : parts) {
            normals.middleRows(r, p.rows()) = p;
            r += p.rows();
        }
    }
    if (normals.rows() >= 2 && bundle.reference.size() >= 2 && bundle.reference.labeled()) {
        const double before = score::linear_mmd2_unbiased(normals, bundle.reference.values);
        const double after = score::linear_mmd2_unbiased(out.adapter->adapt(normals, ndom), bundle.reference.values);
        out.report["mmd_before"] = before;
        out.report["mmd_after"] = after;
        out.report["mmd_reduction"] = before != 0 ? 1.0 - after / before : kNaN;
        const Mat q = adapt::kin_query(*out.adapter, normals, ndom);
        const adapt::KinResult kin = adapt::kin_match(q, out.adapter->encode(bundle.reference.values));
        std::size_t agree = 0;
        for (std::size_t i = 0; i < kin.index.size(); ++i) agree += bundle.reference.labels[kin.index[i]] == nlab[i];
        out.report["kin_type_agreement"] = static_cast<double>(agree) / static_cast<double>(kin.index.size());
    }
    return out;
}

AnnotateOutput run_annotate(const RunConfig& cfg, const detect::Detector& detector, const AdaptOutput& adapted) {
    AnnotateOutput out;
    const auto n = adapted.xi.rows();
    out.report = json{{"anomalies", n}};
    out.embedding2d = Mat(0, 2);
    if (n == 0) {
        out.report["skipped"] = "no flagged instances";
        return out;
    }
    const Mat delta = annot::post_adaptation_deviation(detector, adapted.xi);
    out.result = annot::train_annotator(adapted.xi, delta, cfg.phase3.k, cfg.phase3.annotator, derive_seed(cfg.seed, 3));
    const auto& r = out.result;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto u = static_cast<std::size_t>(i);
        out.clusters.push_back({adapted.domains[u], adapted.ids[u], r.labels[u], r.confidence[u]});
    }
    out.embedding2d = principal_2d(r.state.z);
    out.report["k"] = r.k;
    out.report["inferred"] = r.inferred;
    out.report["convention"] = annot::to_string(cfg.phase3.annotator.convention);
    out.report["iterations"] = r.iterations;
    out.report["change_trace"] = r.change_trace;
    if (r.inferred) out.report["eigenvalues"] = r.eigengap.eigenvalues;
    if (n >= 3) {
        try {
            const auto spec = annot::infer_cluster_count(r.state.z, cfg.phase3.annotator.convention, cfg.phase3.annotator.eigengap_cap);
            const std::size_t keep = std::min<std::size_t>(spec.eigenvalues.size(), 51);
            out.report["spectrum"] = std::vector<double>(spec.eigenvalues.begin(), spec.eigenvalues.begin() + static_cast<std::ptrdiff_t>(keep));
            out.report["spectrum_k"] = spec.k;
        } catch (const NumericError& e) {
            out.report["spectrum_note"] = e.what();
        }
    }
    return out;
}

metrics::MetricsReport evaluate(const RunConfig& cfg, const std::vector<TruthRow>& truth, const std::vector<ScoreRow>& scores,
                                const std::vector<ClusterRow>& clusters, const std::map<std::string, json>& reports) {
    metrics::MetricsReport m;
    m.seed = cfg.seed;
    m.config_digest = config_digest(cfg);
    std::map<std::pair<int, std::string>, const TruthRow*> lookup;
    bool labeled = false;
    for (const auto& t : truth) {
        lookup[{t.dataset, t.id}] = &t;
        labeled = labeled || t.label != data::kUnknownLabel;
    }

    Eigen::VectorXd logits(static_cast<Eigen::Index>(scores.size()));
    std::vector<std::uint8_t> y(scores.size());
    std::vector<std::uint8_t> flags(scores.size());
    std::size_t positives = 0, flagged = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto it = lookup.find({scores[i].dataset, scores[i].id});
        if (it == lookup.end()) throw DataError("no truth row for " + scores[i].id);
        logits(static_cast<Eigen::Index>(i)) = scores[i].logit;
        y[i] = it->second->anomaly;
        flags[i] = scores[i].flagged;
        positives += y[i];
        flagged += flags[i];
    }
    const bool both = positives > 0 && positives < scores.size();
    double auc = kNaN, f1 = kNaN, nmi = kNaN;
    json per_dataset = json::array();
    if (labeled && both) {
        auc = metrics::auc(logits, y);
        f1 = metrics::f1_oracle_threshold(logits, y);
        std::set<int> ds;
        for (const auto& s : scores) ds.insert(s.dataset);
        for (int d : ds) {
            std::vector<Eigen::Index> sel;
            for (std::size_t i = 0; i < scores.size(); ++i)
                if (scores[i].dataset == d) sel.push_back(static_cast<Eigen::Index>(i));
            Eigen::VectorXd l(static_cast<Eigen::Index>(sel.size()));
            std::vector<std::uint8_t> yy(sel.size());
            for (std::size_t i = 0; i < sel.size(); ++i) {
                l(static_cast<Eigen::Index>(i)) = logits(sel[i]);
                yy[i] = y[static_cast<std::size_t>(sel[i])];
            }
            json e{{"dataset", d}};
            const auto pos = std::count(yy.begin(), yy.end(), 1);
            if (pos > 0 && pos < static_cast<std::ptrdiff_t>(yy.size())) {
                e["auc"] = metrics::auc(l, yy);
                e["f1"] = metrics::f1_oracle_threshold(l, yy);
            }
            per_dataset.push_back(e);
        }
        m.extra["flag_f1"] = metrics::f1_score(flags, y);

        // Subtype ids from sorted label names; false positives share one extra class.
        std::vector<int> pred, tru;
        std::map<std::string, int> subtype_id;
        for (const auto& t : truth)
            if (t.anomaly) subtype_id.emplace(t.label, 0);
        int next = 0;
        for (auto& [k, v] : subtype_id) v = next++;
        for (const auto& c : clusters) {
            const auto it = lookup.find({c.dataset, c.id});
            if (it == lookup.end()) throw DataError("no truth row for clustered instance " + c.id);
            const TruthRow& t = *it->second;
            if (cfg.nmi_scope == NmiScope::true_anomalies && !t.anomaly) continue;
            pred.push_back(c.subtype);
            tru.push_back(t.anomaly ? subtype_id.at(t.label) : -1);
        }
        nmi = pred.empty() ? 0.0 : metrics::nmi(pred, tru);
        m.extra["nmi_instances"] = pred.size();
    }
    m.set(auc, f1, nmi);
    m.extra["labeled"] = labeled;
    m.extra["instances"] = scores.size();
    m.extra["true_anomalies"] = positives;
    m.extra["flagged"] = flagged;
    m.extra["threshold"] = cfg.threshold.str();
    m.extra["nmi_scope"] = cfg.nmi_scope == NmiScope::true_anomalies ? "true_anomalies" : "all_flagged";
    m.extra["per_dataset"] = per_dataset;
    for (const auto& [k, v] : reports) m.extra[k] = v;
    return m;
}

PipelineResult run_pipeline(const RunConfig& cfg, bool write) {
    using clock = std::chrono::steady_clock;
    PipelineResult res;
    const fs::path dir = cfg.out;
    if (write) {
        fs::create_directories(dir / "checkpoints");
        write_json(dir / "config.json", config_to_json(cfg));
    }
    auto timed = [&](const std::string& name, auto&& f) {
        const auto t0 = clock::now();
        stage(name, f);
        res.timings[name] = std::chrono::duration<double>(clock::now() - t0).count();
    };

    data::DatasetBundle bundle;
    timed("load", [&] { bundle = load_bundle(cfg); });
    res.truth = truth_rows(bundle);
    if (write) write_truth(dir / "truth.csv", res.truth);

    timed("detect", [&] { res.detect = run_detect(cfg, bundle); });
    if (write) save_detect(dir, res.detect);
    timed("adapt", [&] { res.adapt = run_adapt(cfg, bundle, res.detect.scores); });
    if (write) save_adapt(dir, res.adapt);
    timed("annotate", [&] { res.annotate = run_annotate(cfg, res.detect.detector, res.adapt); });
    if (write) save_annotate(dir, res.annotate);
    timed("evaluate", [&] {
        res.metrics = evaluate(cfg, res.truth, res.detect.scores, res.annotate.clusters,
                               {{"detect", res.detect.report}, {"adapt", res.adapt.report}, {"annotate", res.annotate.report}});
    });
    if (write) {
        write_json(dir / "metrics.json", res.metrics.to_json());
        json manifest{{"format", "facd-run/1"},
                      {"seed", cfg.seed},
                      {"config_digest", config_digest(cfg)},
                      {"config", config_to_json(cfg)},
                      {"threshold", cfg.threshold.str()},
                      {"timings_seconds", res.timings},
                      {"artifacts",
                       {"config.json", "truth.csv", "scores.csv", "detect_report.json", "checkpoints/detector.json",
                        "adapted.csv", "adapt_report.json", "clusters.csv", "embedding.csv", "annotation.json", "metrics.json"}}};
        write_json(dir / "run_manifest.json", manifest);
    }
    return res;
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) throw DataError("cannot write " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path.string() + " is not valid JSON: " + e.what());
    }
}

void write_scores(const fs::path& path, const std::vector<ScoreRow>& rows) {
    data::Table t;
    t.header = {"dataset", "instance_id", "score", "logit", "flagged"};
    for (const auto& r : rows)
        t.rows.push_back({std::to_string(r.dataset), r.id, data::format_double(r.score), data::format_double(r.logit), r.flagged ? "1" : "0"});
    data::write_csv_table(path, t);
}

std::vector<ScoreRow> read_scores(const fs::path& path) {
    const data::Table t = data::read_csv_table(path);
    require_header(t, {"dataset", "instance_id", "score", "logit", "flagged"}, path);
    std::vector<ScoreRow> out;
    for (const auto& r : t.rows)
        out.push_back({parse_int(r[0], path), r[1], parse_double(r[2], path), parse_double(r[3], path), r[4] == "1"});
    return out;
}

void write_clusters(const fs::path& path, const std::vector<ClusterRow>& rows) {
    data::Table t;
    t.header = {"dataset", "instance_id", "subtype_id", "confidence"};
    for (const auto& r : rows) t.rows.push_back({std::to_string(r.dataset), r.id, std::to_string(r.subtype), data::format_double(r.confidence)});
    data::write_csv_table(path, t);
}

std::vector<ClusterRow> read_clusters(const fs::path& path) {
    const data::Table t = data::read_csv_table(path);
    require_header(t, {"dataset", "instance_id", "subtype_id", "confidence"}, path);
    std::vector<ClusterRow> out;
    for (const auto& r : t.rows) out.push_back({parse_int(r[0], path), r[1], parse_int(r[2], path), parse_double(r[3], path)});
    return out;
}

void write_truth(const fs::path& path, const std::vector<TruthRow>& rows) {
    data::Table t;
    t.header = {"dataset", "instance_id", "label", "is_anomaly"};
    for (const auto& r : rows) t.rows.push_back({std::to_string(r.dataset), r.id, r.label, r.anomaly ? "1" : "0"});
    data::write_csv_table(path, t);
}

std::vector<TruthRow> read_truth(const fs::path& path) {
    const data::Table t = data::read_csv_table(path);
    require_header(t, {"dataset", "instance_id", "label", "is_anomaly"}, path);
    std::vector<TruthRow> out;
    for (const auto& r : t.rows) out.push_back({parse_int(r[0], path), r[1], r[2], r[3] == "1"});
    return out;
}

void save_detect(const fs::path& dir, const DetectOutput& out) {
    write_json(dir / "checkpoints" / "detector.json", out.detector.to_json());
    for (std::size_t k = 0; k < out.scorers.size(); ++k)
        write_json(dir / "checkpoints" / ("scorer_" + std::to_string(k) + ".json"), out.scorers[k].to_json());
    write_scores(dir / "scores.csv", out.scores);
    write_json(dir / "detect_report.json", out.report);
}

void save_adapt(const fs::path& dir, const AdaptOutput& out) {
    if (out.adapter) write_json(dir / "checkpoints" / "adapter.json", out.adapter->to_json());
    data::Table t;
    t.header = {"dataset", "instance_id"};
    for (Eigen::Index j = 0; j < out.xi.cols(); ++j) t.header.push_back("x" + std::to_string(j));
    for (Eigen::Index i = 0; i < out.xi.rows(); ++i) {
        std::vector<std::string> row{std::to_string(out.domains[static_cast<std::size_t>(i)]), out.ids[static_cast<std::size_t>(i)]};
        for (Eigen::Index j = 0; j < out.xi.cols(); ++j) row.push_back(data::format_double(out.xi(i, j)));
        t.rows.push_back(std::move(row));
    }
    data::write_csv_table(dir / "adapted.csv", t);
    write_json(dir / "adapt_report.json", out.report);
}

void save_annotate(const fs::path& dir, const AnnotateOutput& out) {
    write_clusters(dir / "clusters.csv", out.clusters);
    data::Table t;
    t.header = {"dataset", "instance_id", "pc1", "pc2", "subtype_id"};
    for (std::size_t i = 0; i < out.clusters.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        t.rows.push_back({std::to_string(out.clusters[i].dataset), out.clusters[i].id, data::format_double(out.embedding2d(r, 0)),
                          data::format_double(out.embedding2d(r, 1)), std::to_string(out.clusters[i].subtype)});
    }
    data::write_csv_table(dir / "embedding.csv", t);
    write_json(dir / "annotation.json", out.report);
    if (!out.clusters.empty())
        write_json(dir / "checkpoints" / "annotator.json",
                   json{{"format", nn::kCheckpointFormat},
                        {"kind", "annotator"},
                        {"fusion", nn::params_to_json(out.result.fusion.parameters())},
                        {"centroids", nn::matrix_to_json(out.result.state.centroids)},
                        {"nu", out.result.state.nu}});
}

detect::Detector load_detector(const fs::path& dir) {
    return detect::Detector::from_json(read_json(dir / "checkpoints" / "detector.json"));
}

AdaptOutput load_adapt(const fs::path& dir) {
    AdaptOutput out;
    if (fs::exists(dir / "checkpoints" / "adapter.json")) out.adapter = adapt::Adapter::from_json(read_json(dir / "checkpoints" / "adapter.json"));
    const fs::path path = dir / "adapted.csv";
    const data::Table t = data::read_csv_table(path);
    if (t.header.size() < 2 || t.header[0] != "dataset" || t.header[1] != "instance_id")
        throw DataError(path.string() + " does not have the expected columns");
    out.xi.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size() - 2));
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        out.domains.push_back(parse_int(t.rows[i][0], path));
        out.ids.push_back(t.rows[i][1]);
        for (std::size_t j = 2; j < t.header.size(); ++j)
            out.xi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j - 2)) = parse_double(t.rows[i][j], path);
    }
    out.report = read_json(dir / "adapt_report.json");
    return out;
}

}  // namespace facd::pipeline
