#include "facd/data.hpp"

#include "facd/errors.hpp"
#include "facd/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace facd::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

void ExpressionMatrix::validate() const {
    if (values.rows() < 1) throw DataError("matrix has no instances");
    if (static_cast<Eigen::Index>(feature_names.size()) != values.cols())
        throw DataError("feature name count does not match column count");
    if (static_cast<Eigen::Index>(instance_ids.size()) != values.rows())
        throw DataError("instance id count does not match row count");
    if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != values.rows())
        throw DataError("label count does not match row count");
    if (!values.allFinite()) throw DataError("matrix contains non-finite entries");
}

void DatasetBundle::validate() const {
    reference.validate();
    if (domain_ids.size() != targets.size()) throw DataError("one domain id per target is required");
    std::set<int> seen;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        targets[i].validate();
        if (targets[i].feature_names != reference.feature_names)
            throw DataError("target " + std::to_string(i) + " features are not aligned with the reference");
        const int d = domain_ids[i];
        if (d < 0 || d >= static_cast<int>(targets.size()) || !seen.insert(d).second)
            throw DataError("domain ids must be unique and lie in [0, number of targets)");
    }
}

DomainVector DomainVector::reference(std::size_t n_targets) {
    DomainVector v;
    v.one_hot_.assign(n_targets, 0);
    return v;
}

DomainVector DomainVector::target(std::size_t domain, std::size_t n_targets) {
    if (domain >= n_targets) throw DataError("domain id out of range");
    DomainVector v = reference(n_targets);
    v.one_hot_[domain] = 1;
    return v;
}

bool DomainVector::is_reference() const { return index() < 0; }

int DomainVector::index() const {
    for (std::size_t i = 0; i < one_hot_.size(); ++i)
        if (one_hot_[i]) return static_cast<int>(i);
    return -1;
}

bool is_anomaly_label(const std::string& label, const std::vector<std::string>& reference_labels) {
    if (label == kUnknownLabel) return false;
    return std::find(reference_labels.begin(), reference_labels.end(), label) == reference_labels.end();
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string quote_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    return out + "\"";
}

double parse_cell(const std::string& s, const fs::path& file, std::size_t row, std::size_t col) {
    double v = 0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    while (e > b && (e[-1] == ' ' || e[-1] == '\t')) --e;
    if (b < e && *b == '+') ++b;
    auto res = std::from_chars(b, e, v);
    if (b == e || res.ec != std::errc() || res.ptr != e || !std::isfinite(v))
        throw DataError("non-numeric cell '" + s + "' in " + file.filename().string() + " at row " +
                        std::to_string(row) + ", column " + std::to_string(col));
    return v;
}

std::vector<std::size_t> other_columns(const std::vector<std::string>& header, std::optional<std::size_t> a,
                                       std::optional<std::size_t> b) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (i != a && i != b) out.push_back(i);
    return out;
}

std::optional<std::size_t> find_column(const std::vector<std::string>& header, const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
}

struct RawFile {
    Table table;
    std::optional<std::size_t> label_col;
    std::optional<std::size_t> id_col;
    std::vector<std::string> ids;
    std::vector<std::string> labels;
};

RawFile read_raw(const fs::path& path, const std::optional<std::string>& label_column,
                 const std::optional<std::string>& id_column) {
    RawFile f;
    f.table = read_csv_table(path);
    const auto& h = f.table.header;
    if (label_column) {
        f.label_col = find_column(h, *label_column);
        if (!f.label_col) throw DataError(path.filename().string() + ": label column '" + *label_column + "' not found");
    }
    if (id_column) {
        f.id_col = find_column(h, *id_column);
        if (!f.id_col) throw DataError(path.filename().string() + ": id column '" + *id_column + "' not found");
    } else {
        f.id_col = find_column(h, "instance_id");
    }
    const std::string stem = path.stem().string();
    for (std::size_t r = 0; r < f.table.rows.size(); ++r) {
        const auto& row = f.table.rows[r];
        f.ids.push_back(f.id_col ? row[*f.id_col] : stem + ":" + std::to_string(r));
        if (f.label_col) f.labels.push_back(row[*f.label_col]);
    }
    return f;
}

ExpressionMatrix numeric_matrix(const RawFile& f, const fs::path& path, const std::vector<std::string>& order) {
    const auto& h = f.table.header;
    std::vector<std::size_t> cols;
    std::vector<std::string> missing;
    for (const auto& name : order) {
        auto c = find_column(h, name);
        if (!c || c == f.label_col || c == f.id_col) missing.push_back(name);
        else cols.push_back(*c);
    }
    std::vector<std::string> extra;
    for (std::size_t c : other_columns(h, f.label_col, f.id_col))
        if (std::find(order.begin(), order.end(), h[c]) == order.end()) extra.push_back(h[c]);
    if (!missing.empty() || !extra.empty()) {
        std::string msg = "feature alignment failed for " + path.filename().string();
        auto join = [](const std::vector<std::string>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
            return s;
        };
        if (!missing.empty()) msg += "; missing features: " + join(missing);
        if (!extra.empty()) msg += "; unexpected features: " + join(extra);
        throw DataError(msg);
    }
    ExpressionMatrix m;
    m.feature_names = order;
    m.instance_ids = f.ids;
    m.labels = f.labels;
    m.values.resize(static_cast<Eigen::Index>(f.table.rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < f.table.rows.size(); ++r)
        for (std::size_t j = 0; j < cols.size(); ++j)
            m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
                parse_cell(f.table.rows[r][cols[j]], path, r + 1, cols[j] + 1);
    return m;
}

}  // namespace

Table read_csv_table(const fs::path& path) {
    const std::string text = read_file(path);
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false, field_started = false;
    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
        record.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            end_record();
        } else if (c == '\r') {
            if (i + 1 < text.size() && text[i + 1] == '\n') continue;
            end_record();
        } else {
            field += c;
            field_started = true;
        }
    }
    if (in_quotes) throw DataError(path.filename().string() + ": unterminated quoted field");
    if (field_started || !record.empty()) end_record();
    if (records.empty()) throw DataError(path.filename().string() + ": missing header row");

    Table t;
    t.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != t.header.size())
            throw DataError(path.filename().string() + ": row " + std::to_string(r) + " has " +
                            std::to_string(records[r].size()) + " fields, expected " +
                            std::to_string(t.header.size()));
        t.rows.push_back(std::move(records[r]));
    }
    return t;
}

void write_csv_table(const fs::path& path, const Table& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << quote_field(cells[i]);
        out << '\n';
    };
    line(table.header);
    for (const auto& r : table.rows) line(r);
    if (!out) throw DataError("failed writing " + path.string());
}

Manifest read_manifest(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    Manifest m;
    try {
        for (const auto& f : j.at("files")) {
            for (const auto& [k, _] : f.items())
                if (k != "path" && k != "role" && k != "domain_id" && k != "label_column" && k != "id_column")
                    throw DataError("manifest: unknown file key '" + k + "'");
            ManifestEntry e;
            e.path = f.at("path").get<std::string>();
            const auto role = f.at("role").get<std::string>();
            if (role != "reference" && role != "target") throw DataError("manifest: role must be reference or target");
            e.reference = role == "reference";
            if (f.contains("domain_id")) e.domain_id = f.at("domain_id").get<int>();
            if (f.contains("label_column")) e.label_column = f.at("label_column").get<std::string>();
            if (f.contains("id_column")) e.id_column = f.at("id_column").get<std::string>();
            m.files.push_back(std::move(e));
        }
        if (j.contains("schema")) {
            for (const auto& c : j.at("schema")) {
                ColumnSchema s;
                s.name = c.at("name").get<std::string>();
                const auto kind = c.at("kind").get<std::string>();
                if (kind == "continuous") s.kind = ColumnKind::continuous;
                else if (kind == "categorical") s.kind = ColumnKind::categorical;
                else if (kind == "exclude") s.kind = ColumnKind::exclude;
                else throw DataError("manifest: unknown column kind '" + kind + "'");
                m.schema.push_back(std::move(s));
            }
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("manifest: ") + e.what());
    }
    return m;
}

DatasetBundle load_csv(const fs::path& manifest_path) {
    return load_csv(read_manifest(manifest_path), manifest_path.parent_path());
}

DatasetBundle load_csv(const Manifest& manifest, const fs::path& base_dir) {
    const ManifestEntry* ref = nullptr;
    std::vector<const ManifestEntry*> tgts;
    for (const auto& e : manifest.files) {
        if (e.reference) {
            if (ref) throw DataError("manifest lists more than one reference file");
            ref = &e;
        } else {
            tgts.push_back(&e);
        }
    }
    if (!ref) throw DataError("manifest has no reference file");

    // Targets without an explicit domain id are numbered in listing order.
    std::vector<int> ids;
    for (std::size_t i = 0; i < tgts.size(); ++i) ids.push_back(tgts[i]->domain_id >= 0 ? tgts[i]->domain_id : static_cast<int>(i));
    std::vector<std::size_t> order(tgts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

    auto resolve = [&](const ManifestEntry& e) { return e.path.is_absolute() ? e.path : base_dir / e.path; };

    DatasetBundle b;
    if (manifest.schema.empty()) {
        const fs::path rp = resolve(*ref);
        RawFile rf = read_raw(rp, ref->label_column, ref->id_column);
        std::vector<std::string> names;
        for (std::size_t c : other_columns(rf.table.header, rf.label_col, rf.id_col)) names.push_back(rf.table.header[c]);
        b.reference = numeric_matrix(rf, rp, names);
        for (std::size_t k : order) {
            const fs::path tp = resolve(*tgts[k]);
            RawFile tf = read_raw(tp, tgts[k]->label_column, tgts[k]->id_column);
            b.targets.push_back(numeric_matrix(tf, tp, names));
            b.domain_ids.push_back(ids[k]);
        }
    } else {
        auto labeled = [&](const ManifestEntry& e) {
            RawFile f = read_raw(resolve(e), e.label_column, e.id_column);
            LabeledTable t;
            t.table = f.table;
            t.instance_ids = f.ids;
            t.labels = f.labels;
            return t;
        };
        LabeledTable rt = labeled(*ref);
        std::vector<LabeledTable> tt;
        for (std::size_t k : order) {
            tt.push_back(labeled(*tgts[k]));
            b.domain_ids.push_back(ids[k]);
        }
        EncodedTables enc = encode_mixed(rt, tt, manifest.schema);
        b.reference = std::move(enc.reference);
        b.targets = std::move(enc.targets);
    }
    b.validate();
    return b;
}

void write_csv(const fs::path& path, const ExpressionMatrix& m) {
    Table t;
    t.header.push_back("instance_id");
    for (const auto& f : m.feature_names) t.header.push_back(f);
    if (m.labeled()) t.header.push_back("label");
    for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
        std::vector<std::string> row;
        row.push_back(m.instance_ids[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < m.values.cols(); ++j) row.push_back(format_double(m.values(i, j)));
        if (m.labeled()) row.push_back(m.labels[static_cast<std::size_t>(i)]);
        t.rows.push_back(std::move(row));
    }
    write_csv_table(path, t);
}

ExpressionMatrix read_matrix_csv(const fs::path& path, const std::optional<std::string>& label_column,
                                 const std::optional<std::string>& id_column) {
    RawFile f = read_raw(path, label_column, id_column);
    std::vector<std::string> names;
    for (std::size_t c : other_columns(f.table.header, f.label_col, f.id_col)) names.push_back(f.table.header[c]);
    ExpressionMatrix m = numeric_matrix(f, path, names);
    return m;
}

void write_bundle(const fs::path& dir, const DatasetBundle& bundle) {
    fs::create_directories(dir);
    json files = json::array();
    auto emit = [&](const ExpressionMatrix& m, const std::string& name, const std::string& role, int domain) {
        write_csv(dir / name, m);
        json e{{"path", name}, {"role", role}};
        if (domain >= 0) e["domain_id"] = domain;
        if (m.labeled()) e["label_column"] = "label";
        e["id_column"] = "instance_id";
        files.push_back(e);
    };
    emit(bundle.reference, "reference.csv", "reference", -1);
    for (std::size_t i = 0; i < bundle.targets.size(); ++i)
        emit(bundle.targets[i], "target_" + std::to_string(bundle.domain_ids[i]) + ".csv", "target", bundle.domain_ids[i]);
    std::ofstream out(dir / "manifest.json");
    out << json{{"files", files}}.dump(2) << '\n';
    if (!out) throw DataError("cannot write manifest in " + dir.string());
}

DatasetBundle preprocess(const DatasetBundle& bundle, const PreprocessConfig& cfg) {
    DatasetBundle out = bundle;
    std::vector<ExpressionMatrix*> all{&out.reference};
    for (auto& t : out.targets) all.push_back(&t);

    if (cfg.normalize_total) {
        std::vector<double> totals;
        for (auto* m : all) {
            if ((m->values.array() < 0).any())
                throw DataError("total-count scaling requires nonnegative values");
            for (Eigen::Index i = 0; i < m->values.rows(); ++i) {
                const double s = m->values.row(i).sum();
                if (s <= 0) throw DataError("instance " + m->instance_ids[static_cast<std::size_t>(i)] + " has zero total count");
            }
        }
        for (Eigen::Index i = 0; i < out.reference.values.rows(); ++i) totals.push_back(out.reference.values.row(i).sum());
        std::sort(totals.begin(), totals.end());
        const std::size_t n = totals.size();
        const double median = n % 2 ? totals[n / 2] : 0.5 * (totals[n / 2 - 1] + totals[n / 2]);
        for (auto* m : all) {
            Eigen::VectorXd s = m->values.rowwise().sum();
            m->values = (m->values.array().colwise() * (median / s.array())).matrix();
        }
    }
    if (cfg.log1p) {
        for (auto* m : all) {
            if ((m->values.array() <= -1).any()) throw DataError("log1p requires values greater than -1");
            m->values = m->values.array().log1p().matrix();
        }
    }
    if (cfg.top_k < 0) throw ConfigError("top_k must be nonnegative");
    if (cfg.top_k > 0) {
        const Eigen::Index nf = out.reference.features();
        if (cfg.top_k > nf)
            throw ConfigError("top_k = " + std::to_string(cfg.top_k) + " exceeds the " + std::to_string(nf) + " available features");
        const Mat& r = out.reference.values;
        Eigen::RowVectorXd mu = r.colwise().mean();
        Eigen::RowVectorXd var = (r.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(r.rows());
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(nf));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return var(a) > var(b); });
        idx.resize(static_cast<std::size_t>(cfg.top_k));
        std::sort(idx.begin(), idx.end());
        for (auto* m : all) {
            Mat v(m->values.rows(), cfg.top_k);
            std::vector<std::string> names;
            for (std::size_t j = 0; j < idx.size(); ++j) {
                v.col(static_cast<Eigen::Index>(j)) = m->values.col(idx[j]);
                names.push_back(m->feature_names[static_cast<std::size_t>(idx[j])]);
            }
            m->values = std::move(v);
            m->feature_names = std::move(names);
        }
    }
    out.validate();
    return out;
}

EncodedTables encode_mixed(const LabeledTable& reference, const std::vector<LabeledTable>& targets,
                           const std::vector<ColumnSchema>& schema) {
    EncodedTables out;
    struct Plan {
        std::size_t ref_col;
        ColumnKind kind;
        std::string name;
        std::vector<std::string> levels;
        double lo = 0, hi = 0;
    };
    auto col_of = [](const Table& t, const std::string& name) {
        auto c = find_column(t.header, name);
        if (!c) throw DataError("schema column '" + name + "' is missing from a data file");
        return *c;
    };
    const fs::path ref_name = "reference";
    std::vector<Plan> plans;
    std::vector<std::string> feature_names;
    for (const auto& s : schema) {
        if (s.kind == ColumnKind::exclude) continue;
        Plan p{col_of(reference.table, s.name), s.kind, s.name, {}, 0, 0};
        if (s.kind == ColumnKind::categorical) {
            std::set<std::string> lv;
            for (const auto& row : reference.table.rows) lv.insert(row[p.ref_col]);
            p.levels.assign(lv.begin(), lv.end());
            for (const auto& l : p.levels) feature_names.push_back(s.name + "=" + l);
        } else {
            p.lo = std::numeric_limits<double>::infinity();
            p.hi = -p.lo;
            for (std::size_t r = 0; r < reference.table.rows.size(); ++r) {
                const double v = parse_cell(reference.table.rows[r][p.ref_col], ref_name, r + 1, p.ref_col + 1);
                p.lo = std::min(p.lo, v);
                p.hi = std::max(p.hi, v);
            }
            if (!(p.hi > p.lo))
                out.report.warnings.push_back("column '" + s.name + "' is constant on the reference; scaled to zero");
            feature_names.push_back(s.name);
        }
        plans.push_back(std::move(p));
    }

    auto encode = [&](const LabeledTable& t, const std::string& which) {
        ExpressionMatrix m;
        m.feature_names = feature_names;
        m.instance_ids = t.instance_ids;
        m.labels = t.labels;
        m.values = Mat::Zero(static_cast<Eigen::Index>(t.table.rows.size()), static_cast<Eigen::Index>(feature_names.size()));
        std::map<std::string, std::size_t> unseen;
        Eigen::Index base = 0;
        for (const auto& p : plans) {
            const std::size_t c = col_of(t.table, p.name);
            for (std::size_t r = 0; r < t.table.rows.size(); ++r) {
                const auto& cell = t.table.rows[r][c];
                const auto ri = static_cast<Eigen::Index>(r);
                if (p.kind == ColumnKind::categorical) {
                    auto it = std::lower_bound(p.levels.begin(), p.levels.end(), cell);
                    if (it != p.levels.end() && *it == cell) m.values(ri, base + (it - p.levels.begin())) = 1.0;
                    else ++unseen[p.name + "=" + cell];
                } else {
                    const double v = parse_cell(cell, which, r + 1, c + 1);
                    m.values(ri, base) = p.hi > p.lo ? (v - p.lo) / (p.hi - p.lo) : 0.0;
                }
            }
            base += p.kind == ColumnKind::categorical ? static_cast<Eigen::Index>(p.levels.size()) : 1;
        }
        for (const auto& [lvl, n] : unseen)
            out.report.warnings.push_back(which + ": unseen category " + lvl + " (" + std::to_string(n) +
                                          " rows) mapped to an all-zero block");
        return m;
    };
    out.reference = encode(reference, "reference");
    for (std::size_t i = 0; i < targets.size(); ++i) out.targets.push_back(encode(targets[i], "target " + std::to_string(i)));
    return out;
}

void SyntheticSpec::validate() const {
    if (n_normal_types < 1 || n_anomaly_subtypes < 1 || n_features < 1 || reference_size < 1)
        throw ConfigError("synthetic counts must be at least 1");
    if (n_domains < 0) throw ConfigError("synthetic n_domains must be nonnegative");
    if (content_separation < 0 || domain_shift_magnitude < 0 || noise_sigma < 0)
        throw ConfigError("synthetic separation, shift and noise must be nonnegative");
    if (static_cast<int>(target_sizes.size()) != n_domains || static_cast<int>(anomaly_ratios.size()) != n_domains)
        throw ConfigError("synthetic target_sizes and anomaly_ratios need one entry per domain");
    for (int s : target_sizes)
        if (s < 1) throw ConfigError("synthetic target sizes must be at least 1");
    for (double r : anomaly_ratios)
        if (!(r >= 0 && r <= 1)) throw ConfigError("synthetic anomaly ratios must lie in [0, 1]");
}

std::string normal_label(int type) { return "normal_" + std::to_string(type); }
std::string anomaly_label(int subtype) { return "anomaly_" + std::to_string(subtype); }

DatasetBundle synth_generate(const SyntheticSpec& spec) {
    SyntheticTruth t;
    return synth_generate(spec, t);
}

DatasetBundle synth_generate(const SyntheticSpec& spec, SyntheticTruth& truth) {
    spec.validate();
    Rng rng(spec.seed);
    const int d = spec.n_features;
    const int n_types = spec.n_normal_types + spec.n_anomaly_subtypes;
    // Independent N(0, s^2 I) prototypes are at expected distance s*sqrt(2d).
    truth.prototypes = rng.normal_matrix(n_types, d) * (spec.content_separation / std::sqrt(2.0 * d));
    truth.offsets = Mat::Zero(spec.n_domains, d);
    for (int k = 0; k < spec.n_domains; ++k) {
        Eigen::RowVectorXd dir = rng.normal_matrix(1, d).row(0);
        if (spec.domain_shift_magnitude > 0) truth.offsets.row(k) = dir.normalized() * spec.domain_shift_magnitude;
    }

    std::vector<std::string> names;
    for (int j = 0; j < d; ++j) names.push_back("f" + std::to_string(j));

    auto make = [&](int n, double ratio, int domain, const std::string& prefix) {
        const int na = static_cast<int>(std::lround(n * ratio));
        std::vector<int> type(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            type[static_cast<std::size_t>(i)] =
                i < n - na ? static_cast<int>(rng.index(static_cast<std::size_t>(spec.n_normal_types)))
                           : spec.n_normal_types + static_cast<int>(rng.index(static_cast<std::size_t>(spec.n_anomaly_subtypes)));
        std::vector<std::size_t> perm = rng.permutation(static_cast<std::size_t>(n));
        ExpressionMatrix m;
        m.feature_names = names;
        m.values.resize(n, d);
        for (int i = 0; i < n; ++i) {
            const int t = type[perm[static_cast<std::size_t>(i)]];
            Eigen::RowVectorXd x = truth.prototypes.row(t);
            if (domain >= 0) x += truth.offsets.row(domain);
            for (int j = 0; j < d; ++j) x(j) += spec.noise_sigma * rng.normal();
            m.values.row(i) = x;
            char id[32];
            std::snprintf(id, sizeof id, "%s%06d", prefix.c_str(), i);
            m.instance_ids.emplace_back(id);
            m.labels.push_back(t < spec.n_normal_types ? normal_label(t) : anomaly_label(t - spec.n_normal_types));
        }
        return m;
    };

    DatasetBundle b;
    b.reference = make(spec.reference_size, 0.0, -1, "ref_");
    for (int k = 0; k < spec.n_domains; ++k) {
        b.targets.push_back(make(spec.target_sizes[static_cast<std::size_t>(k)], spec.anomaly_ratios[static_cast<std::size_t>(k)], k,
                                 "t" + std::to_string(k) + "_"));
        b.domain_ids.push_back(k);
    }
    b.validate();
    return b;
}

}  // namespace facd::data
