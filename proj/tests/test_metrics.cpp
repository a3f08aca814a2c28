#include "facd/metrics.hpp"
#include "facd/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

using namespace facd;
using namespace facd::metrics;
using Vec = Eigen::VectorXd;
using Labels = std::vector<std::uint8_t>;

namespace {

Vec vec(std::vector<double> v) { return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

// Entropy-based NMI straight from the contingency table.
double nmi_direct(const std::vector<int>& a, const std::vector<int>& b) {
    const double n = static_cast<double>(a.size());
    std::map<int, double> pa, pb;
    std::map<std::pair<int, int>, double> pab;
    for (std::size_t i = 0; i < a.size(); ++i) {
        pa[a[i]] += 1 / n;
        pb[b[i]] += 1 / n;
        pab[{a[i], b[i]}] += 1 / n;
    }
    double ha = 0, hb = 0, mi = 0;
    for (auto [k, p] : pa) ha -= p * std::log(p);
    for (auto [k, p] : pb) hb -= p * std::log(p);
    for (auto [k, p] : pab) mi += p * std::log(p / (pa[k.first] * pb[k.second]));
    return mi / ((ha + hb) / 2);
}

}  // namespace

TEST_CASE("auc examples") {
    CHECK(auc(vec({0.9, 0.8, 0.1, 0.2}), {1, 1, 0, 0}) == 1.0);
    CHECK(auc(vec({0.1, 0.2, 0.9}), {0, 0, 1}) == 1.0);
    CHECK(auc(vec({0.5, 0.5}), {1, 0}) == 0.5);
    Rng rng(1);
    Vec s(4000);
    Labels y(4000);
    for (int i = 0; i < 4000; ++i) {
        s(i) = rng.uniform();
        y[static_cast<std::size_t>(i)] = rng.uniform() < 0.3;
    }
    CHECK(std::abs(auc(s, y) - 0.5) < 0.03);
    CHECK_THROWS(auc(vec({0.1, 0.2}), {1, 1}));
}

TEST_CASE("auc equals pair counting and ignores monotone transforms") {
    Rng rng(2);
    for (int t = 0; t < 20; ++t) {
        const int n = 5 + static_cast<int>(rng.index(30));
        Vec s(n);
        Labels y(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            s(i) = std::round(rng.uniform() * 5);  // ties
            y[static_cast<std::size_t>(i)] = i % 3 == 0;
        }
        double wins = 0, pairs = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (y[static_cast<std::size_t>(i)] && !y[static_cast<std::size_t>(j)]) {
                    pairs += 1;
                    wins += s(i) > s(j) ? 1 : s(i) == s(j) ? 0.5 : 0;
                }
        CHECK(auc(s, y) == doctest::Approx(wins / pairs));
        const Vec t2 = (s.array() * 3.0 + 1.0).cube();
        CHECK(auc(t2, y) == doctest::Approx(auc(s, y)));
    }
}

TEST_CASE("oracle-threshold F1 examples") {
    CHECK(f1_oracle_threshold(vec({0.9, 0.8, 0.1, 0.2}), {1, 1, 0, 0}) == 1.0);
    CHECK(f1_oracle_threshold(vec({0.1, 0.2, 0.8, 0.9}), {1, 1, 0, 0}) == 0.0);
    CHECK_THROWS(f1_oracle_threshold(vec({0.1, 0.2}), {0, 0}));
}

TEST_CASE("oracle-threshold F1 matches an exhaustive confusion count") {
    Rng rng(3);
    for (int t = 0; t < 30; ++t) {
        Vec s(6);
        Labels y(6);
        for (int i = 0; i < 6; ++i) {
            s(i) = rng.uniform();
            y[static_cast<std::size_t>(i)] = rng.uniform() < 0.5;
        }
        const int pos = static_cast<int>(std::count(y.begin(), y.end(), 1));
        if (pos == 0 || pos == 6) continue;
        // Flag the pos largest scores by repeated selection.
        Labels flag(6, 0);
        for (int r = 0; r < pos; ++r) {
            int best = -1;
            for (int i = 0; i < 6; ++i)
                if (!flag[static_cast<std::size_t>(i)] && (best < 0 || s(i) > s(best))) best = i;
            flag[static_cast<std::size_t>(best)] = 1;
        }
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < 6; ++i) {
            tp += flag[i] && y[i];
            fp += flag[i] && !y[i];
            fn += !flag[i] && y[i];
        }
        const double f1 = 2 * tp / (2 * tp + fp + fn);
        CHECK(f1_oracle_threshold(s, y) == doctest::Approx(f1));
        CHECK(f1_oracle_threshold(s.array().cube() + 2, y) == doctest::Approx(f1));
        CHECK(f1_score(flag, y) == doctest::Approx(f1));
    }
}

TEST_CASE("nmi examples") {
    CHECK(nmi({0, 0, 1, 1, 2}, {0, 0, 1, 1, 2}) == doctest::Approx(1.0));
    CHECK(nmi({0, 0, 1, 1}, {3, 3, 3, 3}) == 0.0);
    CHECK(nmi({0, 0, 1, 1}, {0, 1, 0, 1}) == doctest::Approx(0.0));
}

TEST_CASE("nmi is symmetric, permutation invariant and matches the entropy formula") {
    Rng rng(4);
    for (int t = 0; t < 30; ++t) {
        std::vector<int> a(20), b(20);
        for (int i = 0; i < 20; ++i) {
            a[static_cast<std::size_t>(i)] = static_cast<int>(rng.index(3));
            b[static_cast<std::size_t>(i)] = static_cast<int>(rng.index(4));
        }
        std::vector<int> renamed = a;
        for (int& x : renamed) x = (x + 1) % 3 + 10;
        const double v = nmi(a, b);
        CHECK(v == doctest::Approx(nmi(b, a)));
        CHECK(v == doctest::Approx(nmi(renamed, b)));
        CHECK(v == doctest::Approx(nmi_direct(a, b)));
        CHECK(v >= 0);
        CHECK(v <= 1 + 1e-12);
    }
}

TEST_CASE("silhouette of separated clusters is near one") {
    Eigen::MatrixXd x(4, 1);
    x << 0, 0.1, 10, 10.1;
    // Within-cluster distance 0.1; mean distance to the other cluster 10.05 or 9.95.
    const double expect = 1 - 0.05 * (1 / 10.05 + 1 / 9.95);
    CHECK(silhouette(x, {0, 0, 1, 1}) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("report JSON and aggregation") {
    MetricsReport r;
    r.set(0.9, 0.8, 0.5);
    CHECK(r.f1_times_nmi == doctest::Approx(0.4));
    r.extra["k"] = 3;
    const auto j = r.to_json();
    CHECK(j.at("auc") == 0.9);
    CHECK(j.at("k") == 3);
    CHECK(mean_std({0.5, 0.56}) == "0.53(0.04)");
    const auto path = std::filesystem::temp_directory_path() / "facd_test_aggregate.csv";
    write_aggregate_csv(path, {r, r});
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "metric,mean,std,n,summary");
}
