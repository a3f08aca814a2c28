#include "facd/plot.hpp"

#include "facd/data.hpp"
#include "facd/errors.hpp"
#include "facd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace facd::plot {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640, kHeight = 420, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// Minimal SVG canvas with a single data frame.
class Canvas {
public:
    Canvas(std::string title, double x0, double x1, double y0, double y1) : x0_(x0), x1_(x1), y0_(y0), y1_(y1) {
        if (x1_ <= x0_) x1_ = x0_ + 1;
        if (y1_ <= y0_) y1_ = y0_ + 1;
        body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight) << "\">\n";
        body_ << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        text(kWidth / 2, 24, title, "middle", 15);
        body_ << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(kWidth - kLeft - kRight)
              << "\" height=\"" << num(kHeight - kTop - kBottom) << "\" fill=\"none\" stroke=\"black\"/>\n";
        for (int t = 0; t <= 4; ++t) {
            const double xv = x0_ + (x1_ - x0_) * t / 4.0, yv = y0_ + (y1_ - y0_) * t / 4.0;
            text(px(xv), kHeight - kBottom + 16, num(xv), "middle", 11);
            text(kLeft - 6, py(yv) + 4, num(yv), "end", 11);
        }
    }

    double px(double x) const { return kLeft + (x - x0_) / (x1_ - x0_) * (kWidth - kLeft - kRight); }
    double py(double y) const { return kHeight - kBottom - (y - y0_) / (y1_ - y0_) * (kHeight - kTop - kBottom); }

    void text(double x, double y, const std::string& s, const char* anchor, int size) {
        body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\" font-family=\"sans-serif\" font-size=\""
              << size << "\">" << escape(s) << "</text>\n";
    }
    void rect(double xa, double xb, double ya, double yb, const char* colour, double opacity) {
        body_ << "<rect x=\"" << num(px(xa)) << "\" y=\"" << num(py(yb)) << "\" width=\"" << num(px(xb) - px(xa)) << "\" height=\""
              << num(py(ya) - py(yb)) << "\" fill=\"" << colour << "\" fill-opacity=\"" << num(opacity) << "\"/>\n";
    }
    void dot(double x, double y, const char* colour) {
        body_ << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"2.5\" fill=\"" << colour << "\"/>\n";
    }
    void line(double xa, double ya, double xb, double yb, const char* colour) {
        body_ << "<line x1=\"" << num(px(xa)) << "\" y1=\"" << num(py(ya)) << "\" x2=\"" << num(px(xb)) << "\" y2=\"" << num(py(yb))
              << "\" stroke=\"" << colour << "\" stroke-width=\"1.5\"/>\n";
    }
    void legend(std::size_t slot, const char* colour, const std::string& label) {
        const double y = kTop + 14 + 16 * static_cast<double>(slot);
        body_ << "<rect x=\"" << num(kWidth - kRight - 150) << "\" y=\"" << num(y - 9) << "\" width=\"10\" height=\"10\" fill=\"" << colour << "\"/>\n";
        text(kWidth - kRight - 134, y, label, "start", 11);
    }
    void axis_labels(const std::string& xl, const std::string& yl) {
        text(kLeft + (kWidth - kLeft - kRight) / 2, kHeight - 12, xl, "middle", 12);
        body_ << "<text x=\"16\" y=\"" << num(kTop + (kHeight - kTop - kBottom) / 2) << "\" transform=\"rotate(-90 16 "
              << num(kTop + (kHeight - kTop - kBottom) / 2) << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
              << escape(yl) << "</text>\n";
    }
    void save(const fs::path& path) {
        std::ofstream out(path, std::ios::binary);
        out << body_.str() << "</svg>\n";
        if (!out) throw DataError("cannot write " + path.string());
    }

private:
    double x0_, x1_, y0_, y1_;
    std::ostringstream body_;
};

fs::path require(const fs::path& p) {
    if (!fs::exists(p)) throw DataError("missing run artifact " + p.string());
    return p;
}

using Key = std::pair<int, std::string>;

void score_histogram(const std::vector<pipeline::ScoreRow>& scores, const std::map<Key, std::string>& labels, bool labeled,
                     const fs::path& path) {
    constexpr int bins = 30;
    std::map<std::string, std::vector<double>> groups;
    for (const auto& s : scores) {
        std::string g = "all instances";
        if (labeled) {
            const auto it = labels.find({s.dataset, s.id});
            g = it == labels.end() ? data::kUnknownLabel : it->second;
        }
        groups[g].push_back(s.score);
    }
    std::map<std::string, std::vector<int>> counts;
    int peak = 1;
    for (const auto& [g, v] : groups) {
        auto& c = counts[g];
        c.assign(bins, 0);
        for (double s : v) ++c[static_cast<std::size_t>(std::clamp(static_cast<int>(s * bins), 0, bins - 1))];
        peak = std::max(peak, *std::max_element(c.begin(), c.end()));
    }
    Canvas cv("Anomaly scores by true label", 0, 1, 0, peak);
    std::size_t slot = 0;
    for (const auto& [g, c] : counts) {
        const char* colour = kPalette[slot % std::size(kPalette)];
        for (int b = 0; b < bins; ++b)
            if (c[static_cast<std::size_t>(b)] > 0) cv.rect(b / double(bins), (b + 1) / double(bins), 0, c[static_cast<std::size_t>(b)], colour, 0.45);
        cv.legend(slot++, colour, g);
    }
    cv.axis_labels("score", "count");
    cv.save(path);
}

void embedding_scatter(const data::Table& emb, const std::map<Key, std::string>& labels, const fs::path& path) {
    std::vector<double> xs, ys;
    std::vector<std::string> group;
    for (const auto& r : emb.rows) {
        xs.push_back(std::stod(r[2]));
        ys.push_back(std::stod(r[3]));
        const auto it = labels.find({std::stoi(r[0]), r[1]});
        group.push_back(it == labels.end() ? data::kUnknownLabel : it->second);
    }
    auto [xa, xb] = std::minmax_element(xs.begin(), xs.end());
    auto [ya, yb] = std::minmax_element(ys.begin(), ys.end());
    Canvas cv("Flagged instances, fused embedding", *xa, *xb, *ya, *yb);
    std::map<std::string, std::size_t> slot;
    for (const auto& g : group) slot.emplace(g, 0);
    std::size_t next = 0;
    for (auto& [g, s] : slot) {
        s = next++;
        cv.legend(s, kPalette[s % std::size(kPalette)], g);
    }
    for (std::size_t i = 0; i < xs.size(); ++i) cv.dot(xs[i], ys[i], kPalette[slot.at(group[i]) % std::size(kPalette)]);
    cv.axis_labels("pc1", "pc2");
    cv.save(path);
}

void eigen_plot(const std::vector<double>& ev, int k, const fs::path& path) {
    const double top = *std::max_element(ev.begin(), ev.end());
    Canvas cv("Laplacian eigenvalues (chosen k = " + std::to_string(k) + ")", 1, static_cast<double>(ev.size()), 0, std::max(top, 1e-12));
    for (std::size_t i = 0; i + 1 < ev.size(); ++i) cv.line(double(i + 1), ev[i], double(i + 2), ev[i + 1], kPalette[0]);
    for (std::size_t i = 0; i < ev.size(); ++i) cv.dot(double(i + 1), ev[i], static_cast<int>(i) + 1 == k ? kPalette[1] : kPalette[0]);
    cv.axis_labels("index", "eigenvalue");
    cv.save(path);
}

}  // namespace

PlotResult plot_run(const fs::path& run_dir, const fs::path& out_dir) {
    const fs::path out = out_dir.empty() ? run_dir : out_dir;
    const auto scores = pipeline::read_scores(require(run_dir / "scores.csv"));
    const auto truth = pipeline::read_truth(require(run_dir / "truth.csv"));
    std::map<Key, std::string> labels;
    bool labeled = false;
    for (const auto& t : truth) {
        labels[{t.dataset, t.id}] = t.label;
        labeled = labeled || t.label != data::kUnknownLabel;
    }
    fs::create_directories(out);
    PlotResult res;

    score_histogram(scores, labels, labeled, out / "score_histogram.svg");
    res.written.push_back(out / "score_histogram.svg");
    if (!labeled) {
        res.notices.push_back("no ground-truth labels: embedding scatter and eigenvalue plot skipped");
        return res;
    }

    const data::Table emb = data::read_csv_table(require(run_dir / "embedding.csv"));
    if (emb.rows.empty()) {
        res.notices.push_back("no flagged instances: embedding scatter skipped");
    } else {
        embedding_scatter(emb, labels, out / "embedding_scatter.svg");
        res.written.push_back(out / "embedding_scatter.svg");
    }

    const json ann = pipeline::read_json(require(run_dir / "annotation.json"));
    std::vector<double> ev;
    int k = ann.value("k", 0);
    if (ann.contains("eigenvalues")) {
        ev = ann["eigenvalues"].get<std::vector<double>>();
    } else if (ann.contains("spectrum")) {
        ev = ann["spectrum"].get<std::vector<double>>();
        k = ann.value("spectrum_k", k);
    }
    if (ev.size() < 2) {
        res.notices.push_back("no eigenvalue spectrum recorded: eigenvalue plot skipped");
    } else {
        eigen_plot(ev, k, out / "eigenvalues.svg");
        res.written.push_back(out / "eigenvalues.svg");
    }
    return res;
}

}  // namespace facd::plot
