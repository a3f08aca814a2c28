#include "facd/data.hpp"
#include "facd/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

using namespace facd;
using namespace facd::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("facd_test_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

void write_manifest(const fs::path& dir, const std::string& target_file) {
    write_text(dir / "manifest.json", R"({"files": [
        {"path": "ref.csv", "role": "reference", "label_column": "label", "id_column": "id"},
        {"path": ")" + target_file + R"(", "role": "target", "domain_id": 0, "id_column": "id"}]})");
}

}  // namespace

TEST_CASE("identical headers load as one target") {
    const auto dir = scratch("same");
    write_text(dir / "ref.csv", "id,a,b,label\nr1,1,2,x\nr2,3,4,y\n");
    write_text(dir / "tgt.csv", "id,a,b\nt1,5,6\n");
    write_manifest(dir, "tgt.csv");
    const DatasetBundle b = load_csv(dir / "manifest.json");
    CHECK(b.n_targets() == 1);
    CHECK(b.reference.values(1, 1) == 4);
    CHECK(b.targets[0].values(0, 0) == 5);
}

TEST_CASE("permuted columns are reordered to the reference order") {
    const auto dir = scratch("perm");
    write_text(dir / "ref.csv", "id,a,b,label\nr1,1,2,x\n");
    write_text(dir / "tgt.csv", "id,b,a\nt1,6,5\n");
    write_manifest(dir, "tgt.csv");
    const DatasetBundle b = load_csv(dir / "manifest.json");
    CHECK(b.targets[0].feature_names == std::vector<std::string>{"a", "b"});
    CHECK(b.targets[0].values(0, 0) == 5);
    CHECK(b.targets[0].values(0, 1) == 6);
}

TEST_CASE("missing feature is named in the alignment error") {
    const auto dir = scratch("missing");
    write_text(dir / "ref.csv", "id,a,b,gene_x,label\nr1,1,2,3,x\n");
    write_text(dir / "tgt.csv", "id,a,b\nt1,5,6\n");
    write_manifest(dir, "tgt.csv");
    try {
        load_csv(dir / "manifest.json");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("gene_x") != std::string::npos);
    }
}

TEST_CASE("non-numeric cell reports row and column") {
    const auto dir = scratch("nonnum");
    write_text(dir / "ref.csv", "id,a,b,label\nr1,1,2,x\n");
    write_text(dir / "tgt.csv", "id,a,b\nt1,5,six\n");
    write_manifest(dir, "tgt.csv");
    try {
        load_csv(dir / "manifest.json");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("six") != std::string::npos);
        CHECK(msg.find("row 1") != std::string::npos);
    }
}

TEST_CASE("unlabeled target instances read as unknown in downstream truth") {
    const auto dir = scratch("unlab");
    write_text(dir / "ref.csv", "id,a,label\nr1,1,x\nr2,2,x\n");
    write_text(dir / "tgt.csv", "id,a\nt1,5\n");
    write_manifest(dir, "tgt.csv");
    const DatasetBundle b = load_csv(dir / "manifest.json");
    CHECK_FALSE(b.targets[0].labeled());
    CHECK(b.reference.labeled());
}

TEST_CASE("write_csv then load is exact") {
    SyntheticSpec s;
    s.n_features = 5;
    s.reference_size = 20;
    s.target_sizes = {15, 10};
    const DatasetBundle a = synth_generate(s);
    const auto dir = scratch("roundtrip");
    write_bundle(dir, a);
    const DatasetBundle b = load_csv(dir / "manifest.json");
    CHECK(a.reference.values == b.reference.values);
    REQUIRE(b.n_targets() == 2);
    CHECK(a.targets[1].values == b.targets[1].values);
    CHECK(a.targets[1].labels == b.targets[1].labels);
    CHECK(a.targets[1].instance_ids == b.targets[1].instance_ids);
}

TEST_CASE("preprocess identity config leaves the bundle unchanged") {
    SyntheticSpec s;
    s.n_features = 4;
    s.reference_size = 10;
    s.target_sizes = {8, 8};
    const DatasetBundle a = synth_generate(s);
    const DatasetBundle b = preprocess(a, PreprocessConfig{});
    CHECK(a.reference.values == b.reference.values);
    CHECK(a.targets[0].values == b.targets[0].values);
}

TEST_CASE("variance filter drops a constant feature") {
    DatasetBundle b;
    b.reference.values = Mat(4, 3);
    b.reference.values << 1, 7, 0, 2, 7, 5, 3, 7, 1, 9, 7, 2;
    b.reference.feature_names = {"a", "const", "c"};
    b.reference.instance_ids = {"1", "2", "3", "4"};
    PreprocessConfig cfg;
    cfg.top_k = 2;
    const DatasetBundle out = preprocess(b, cfg);
    CHECK(out.reference.feature_names.size() == 2);
    CHECK(std::find(out.reference.feature_names.begin(), out.reference.feature_names.end(), "const") == out.reference.feature_names.end());
}

TEST_CASE("counts [2,2] scale then log to log 3") {
    DatasetBundle b;
    b.reference.values = Mat(2, 2);
    b.reference.values << 2, 2, 1, 3;  // both totals are 4, so the median total is 4
    b.reference.feature_names = {"a", "b"};
    b.reference.instance_ids = {"1", "2"};
    PreprocessConfig cfg;
    cfg.normalize_total = true;
    cfg.log1p = true;
    const DatasetBundle out = preprocess(b, cfg);
    CHECK(out.reference.values(0, 0) == doctest::Approx(std::log(3.0)));
    CHECK(out.reference.values(0, 1) == doctest::Approx(std::log(3.0)));
}

TEST_CASE("preprocess errors") {
    DatasetBundle b;
    b.reference.values = Mat::Zero(2, 2);
    b.reference.values(1, 0) = 1;
    b.reference.feature_names = {"a", "b"};
    b.reference.instance_ids = {"cell_zero", "cell_one"};
    PreprocessConfig cfg;
    cfg.normalize_total = true;
    try {
        preprocess(b, cfg);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("cell_zero") != std::string::npos);
    }
    PreprocessConfig k;
    k.top_k = 3;
    CHECK_THROWS_AS(preprocess(b, k), ConfigError);
}

namespace {
LabeledTable table(std::vector<std::string> header, std::vector<std::vector<std::string>> rows) {
    LabeledTable t;
    t.table.header = std::move(header);
    t.table.rows = std::move(rows);
    for (std::size_t i = 0; i < t.table.rows.size(); ++i) t.instance_ids.push_back(std::to_string(i));
    return t;
}
}  // namespace

TEST_CASE("categorical with three levels becomes three binary columns") {
    const auto ref = table({"color"}, {{"red"}, {"green"}, {"blue"}, {"red"}});
    const auto enc = encode_mixed(ref, {}, {{"color", ColumnKind::categorical}});
    CHECK(enc.reference.features() == 3);
    CHECK((enc.reference.values.rowwise().sum().array() == 1.0).all());
}

TEST_CASE("constant continuous column scales to zero with a warning") {
    const auto ref = table({"x", "y"}, {{"4", "1"}, {"4", "3"}});
    const auto tgt = table({"x", "y"}, {{"9", "2"}});
    const auto enc = encode_mixed(ref, {tgt}, {{"x", ColumnKind::continuous}, {"y", ColumnKind::continuous}});
    CHECK(enc.reference.values.col(0).isZero());
    CHECK(enc.targets[0].values(0, 0) == 0);
    CHECK(enc.targets[0].values(0, 1) == doctest::Approx(0.5));
    CHECK(enc.report.warnings.size() == 1);
}

TEST_CASE("protocol column is excluded and unseen levels map to zero blocks") {
    const auto ref = table({"protocol", "service", "bytes"}, {{"tcp", "http", "10"}, {"tcp", "ftp", "30"}});
    const auto tgt = table({"protocol", "service", "bytes"}, {{"udp", "dns", "20"}});
    const auto enc = encode_mixed(ref, {tgt}, {{"protocol", ColumnKind::exclude}, {"service", ColumnKind::categorical}, {"bytes", ColumnKind::continuous}});
    CHECK(enc.reference.feature_names == std::vector<std::string>{"service=ftp", "service=http", "bytes"});
    CHECK(enc.targets[0].values(0, 0) == 0);
    CHECK(enc.targets[0].values(0, 1) == 0);
    CHECK(enc.targets[0].values(0, 2) == doctest::Approx(0.5));
    CHECK(enc.report.warnings.size() == 1);
}

TEST_CASE("synthetic generation is reproducible from the seed") {
    SyntheticSpec s;
    s.seed = 17;
    const auto a = synth_generate(s), b = synth_generate(s);
    CHECK(a.reference.values == b.reference.values);
    CHECK(a.targets[1].values == b.targets[1].values);
    CHECK(a.targets[1].labels == b.targets[1].labels);
}

TEST_CASE("zero shift gives identically distributed normals") {
    SyntheticSpec s;
    s.domain_shift_magnitude = 0;
    s.noise_sigma = 0;
    SyntheticTruth t;
    const auto b = synth_generate(s, t);
    CHECK(t.offsets.isZero());
    // Noise-free normals equal their prototypes in every domain.
    for (Eigen::Index i = 0; i < b.targets[0].size(); ++i) {
        const auto& lab = b.targets[0].labels[static_cast<std::size_t>(i)];
        if (lab.rfind("normal_", 0) == 0) CHECK((b.targets[0].values.row(i) - t.prototypes.row(std::stoi(lab.substr(7)))).norm() == 0.0);
    }
}

TEST_CASE("noise-free single type equals prototype plus offset") {
    SyntheticSpec s;
    s.n_normal_types = 1;
    s.noise_sigma = 0;
    s.domain_shift_magnitude = 3;
    SyntheticTruth t;
    const auto b = synth_generate(s, t);
    for (std::size_t k = 0; k < b.n_targets(); ++k) {
        CHECK(t.offsets.row(static_cast<Eigen::Index>(k)).norm() == doctest::Approx(3.0));
        for (Eigen::Index i = 0; i < b.targets[k].size(); ++i)
            if (b.targets[k].labels[static_cast<std::size_t>(i)] == "normal_0")
                CHECK((b.targets[k].values.row(i) - t.prototypes.row(0) - t.offsets.row(static_cast<Eigen::Index>(k))).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("same-type mean difference across domains approximates the offset") {
    SyntheticSpec s;
    s.reference_size = 3000;
    s.target_sizes = {3000, 3000};
    s.seed = 5;
    SyntheticTruth t;
    const auto b = synth_generate(s, t);
    for (std::size_t k = 0; k < 2; ++k) {
        std::map<std::string, std::pair<Eigen::RowVectorXd, int>> ref_mean, tgt_mean;
        auto accumulate = [](auto& acc, const ExpressionMatrix& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i) {
                auto& [sum, n] = acc.try_emplace(m.labels[static_cast<std::size_t>(i)], Eigen::RowVectorXd::Zero(m.features()), 0).first->second;
                sum += m.values.row(i);
                ++n;
            }
        };
        accumulate(ref_mean, b.reference);
        accumulate(tgt_mean, b.targets[k]);
        for (const auto& [lab, rs] : ref_mean) {
            const auto& ts = tgt_mean.at(lab);
            const Eigen::RowVectorXd diff = ts.first / ts.second - rs.first / rs.second;
            const double tol = 4 * s.noise_sigma * std::sqrt(1.0 / ts.second + 1.0 / rs.second);
            CHECK((diff - t.offsets.row(static_cast<Eigen::Index>(k))).cwiseAbs().maxCoeff() < tol);
        }
    }
}

TEST_CASE("reference holds only normal types and generator settings are validated") {
    const auto b = synth_generate(SyntheticSpec{});
    for (const auto& l : b.reference.labels) CHECK(l.rfind("normal_", 0) == 0);
    SyntheticSpec bad;
    bad.anomaly_ratios = {0.2, 1.5};
    CHECK_THROWS_AS(synth_generate(bad), ConfigError);
    SyntheticSpec none;
    none.n_domains = 0;
    none.target_sizes.clear();
    none.anomaly_ratios.clear();
    CHECK(synth_generate(none).n_targets() == 0);
}

TEST_CASE("domain vector one-hot encoding") {
    CHECK(DomainVector::reference(3).is_reference());
    CHECK(DomainVector::target(2, 3).index() == 2);
    CHECK(DomainVector::target(2, 3).one_hot() == std::vector<std::uint8_t>{0, 0, 1});
    CHECK_THROWS_AS(DomainVector::target(3, 3), DataError);
}
