#include "facd/metrics.hpp"

#include "facd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace facd::metrics {

namespace {

void check_binary(const Eigen::VectorXd& scores, const std::vector<std::uint8_t>& labels) {
    if (static_cast<std::size_t>(scores.size()) != labels.size()) throw std::invalid_argument("scores and labels differ in length");
    const auto pos = std::count_if(labels.begin(), labels.end(), [](std::uint8_t v) { return v != 0; });
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size()))
        throw DataError("metric needs both classes present");
}

double entropy(const std::map<int, double>& counts, double n) {
    double h = 0;
    for (const auto& [k, c] : counts)
        if (c > 0) h -= c / n * std::log(c / n);
    return h;
}

}  // namespace

double auc(const Eigen::VectorXd& scores, const std::vector<std::uint8_t>& labels) {
    check_binary(scores, labels);
    const auto n = static_cast<std::size_t>(scores.size());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores(static_cast<Eigen::Index>(a)) < scores(static_cast<Eigen::Index>(b));
    });
    // Average ranks over ties.
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores(static_cast<Eigen::Index>(order[j + 1])) == scores(static_cast<Eigen::Index>(order[i]))) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) rank[order[t]] = r;
        i = j + 1;
    }
    double pos = 0, sum = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (labels[i]) {
            pos += 1;
            sum += rank[i];
        }
    const double neg = static_cast<double>(n) - pos;
    return (sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double f1_score(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("f1: length mismatch");
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        tp += pred[i] && truth[i];
        fp += pred[i] && !truth[i];
        fn += !pred[i] && truth[i];
    }
    return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

double f1_oracle_threshold(const Eigen::VectorXd& scores, const std::vector<std::uint8_t>& labels) {
    check_binary(scores, labels);
    const auto n = static_cast<std::size_t>(scores.size());
    const auto k = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](std::uint8_t v) { return v != 0; }));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
    });
    std::vector<std::uint8_t> pred(n, 0);
    for (std::size_t i = 0; i < k; ++i) pred[order[i]] = 1;
    return f1_score(pred, labels);
}

double nmi(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("nmi: length mismatch");
    if (a.empty()) throw std::invalid_argument("nmi: empty partitions");
    const double n = static_cast<double>(a.size());
    std::map<int, double> ca, cb;
    std::map<std::pair<int, int>, double> joint;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ca[a[i]] += 1;
        cb[b[i]] += 1;
        joint[{a[i], b[i]}] += 1;
    }
    const double ha = entropy(ca, n), hb = entropy(cb, n);
    if (ha == 0 && hb == 0) return 1.0;
    if (ha == 0 || hb == 0) return 0.0;
    double mi = 0;
    for (const auto& [key, c] : joint) mi += c / n * std::log(c * n / (ca[key.first] * cb[key.second]));
    return std::clamp(mi / (0.5 * (ha + hb)), 0.0, 1.0);
}

double silhouette(const Eigen::MatrixXd& x, const std::vector<int>& labels) {
    const auto n = x.rows();
    if (static_cast<std::size_t>(n) != labels.size()) throw std::invalid_argument("silhouette: length mismatch");
    std::map<int, int> sizes;
    for (int l : labels) ++sizes[l];
    if (sizes.size() < 2) throw DataError("silhouette needs at least two clusters");
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        std::map<int, double> dist;
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) dist[labels[static_cast<std::size_t>(j)]] += (x.row(i) - x.row(j)).norm();
        const int own = labels[static_cast<std::size_t>(i)];
        if (sizes[own] == 1) continue;
        const double a = dist[own] / (sizes[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [l, d] : dist)
            if (l != own) b = std::min(b, d / sizes[l]);
        total += (b - a) / std::max(a, b);
    }
    return total / static_cast<double>(n);
}

void MetricsReport::set(double auc_v, double f1_v, double nmi_v) {
    auc = auc_v;
    f1 = f1_v;
    nmi = nmi_v;
    f1_times_nmi = f1_v * nmi_v;
}

json MetricsReport::to_json() const {
    json j = extra;
    j["auc"] = auc;
    j["f1"] = f1;
    j["nmi"] = nmi;
    j["f1_times_nmi"] = f1_times_nmi;
    j["seed"] = seed;
    j["config_digest"] = config_digest;
    return j;
}

std::string mean_std(const std::vector<double>& v, int digits) {
    if (v.empty()) return "nan";
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << mean << '(' << sd << ')';
    return s.str();
}

void write_aggregate_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& runs) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "metric,mean,std,n,summary\n";
    auto row = [&](const char* name, auto get) {
        std::vector<double> v;
        for (const auto& r : runs) v.push_back(get(r));
        const double mean = v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double var = 0;
        for (double x : v) var += (x - mean) * (x - mean);
        const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
        out << name << ',' << mean << ',' << sd << ',' << v.size() << ',' << mean_std(v) << '\n';
    };
    row("auc", [](const MetricsReport& r) { return r.auc; });
    row("f1", [](const MetricsReport& r) { return r.f1; });
    row("nmi", [](const MetricsReport& r) { return r.nmi; });
    row("f1_times_nmi", [](const MetricsReport& r) { return r.f1_times_nmi; });
}

}  // namespace facd::metrics
