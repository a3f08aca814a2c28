#include "facd/annotator.hpp"

#include "facd/errors.hpp"
#include "facd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace facd::annot {

Mat post_adaptation_deviation(const detect::Detector& detector, const Mat& xi) {
    return detect::reconstruction_deviation(detector, xi);
}

FusionBlock::FusionBlock(int n_features, int dim, int heads, std::uint64_t seed) : dim_(dim), heads_(heads) {
    if (dim < 1 || heads < 1 || dim % heads != 0) throw ConfigError("fusion head count must divide the fusion width");
    Rng rng(seed);
    wq = nn::Linear(n_features, dim, rng, "fusion.wq");
    wk = nn::Linear(n_features, dim, rng, "fusion.wk");
    wv = nn::Linear(n_features, dim, rng, "fusion.wv");
    wpsi = nn::Linear(dim, dim, rng, "fusion.wpsi");
    ffn_in = nn::Linear(dim, 4 * dim, rng, "fusion.ffn_in");
    ffn_out = nn::Linear(4 * dim, dim, rng, "fusion.ffn_out");
    ln1 = nn::LayerNorm(dim, "fusion.ln1");
    ln2 = nn::LayerNorm(dim, "fusion.ln2");
}

Var FusionBlock::forward(const Var& xi, const Var& delta, std::vector<Mat>* attention) const {
    if (xi.rows() != delta.rows() || xi.cols() != delta.cols()) throw std::invalid_argument("fuse: xi and delta differ in shape");
    const Var q = wq.forward(xi);
    const Var k = wk.forward(delta);
    const Var v = wv.forward(delta);
    const int dh = dim_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> heads;
    if (attention) attention->clear();
    for (int h = 0; h < heads_; ++h) {
        const Var qh = ad::slice_cols(q, h * dh, dh);
        const Var kh = ad::slice_cols(k, h * dh, dh);
        const Var vh = ad::slice_cols(v, h * dh, dh);
        const Var a = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), scale));
        if (attention) attention->push_back(a.value());
        heads.push_back(ad::matmul(a, vh));
    }
    const Var psi = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
    const Var z = ln1.forward(ad::add(q, wpsi.forward(psi)));
    return ln2.forward(ad::add(z, ffn_out.forward(ad::relu(ffn_in.forward(z)))));
}

Mat FusionBlock::forward(const Mat& xi, const Mat& delta) const {
    ad::NoGradGuard off;
    return forward(ad::constant(xi), ad::constant(delta)).value();
}

nn::ParamList FusionBlock::parameters() const {
    nn::ParamList out;
    for (const auto* l : {&wq, &wk, &wv, &wpsi, &ffn_in, &ffn_out}) l->collect(out);
    ln1.collect(out);
    ln2.collect(out);
    return out;
}

Var soft_assign(const Var& z, const Var& centroids, double nu) {
    if (z.cols() != centroids.cols()) throw std::invalid_argument("soft_assign: width mismatch");
    const Var zn = ad::row_sum(ad::square(z));
    const Var mn = ad::transpose(ad::row_sum(ad::square(centroids)));
    const Var cross = ad::matmul(z, ad::transpose(centroids));
    const Var d2 = ad::clamp_min(ad::add_rowvec(ad::add_colvec(ad::scale(cross, -2.0), zn), mn), 0.0);
    const Var kern = ad::reciprocal(ad::add_scalar(ad::scale(d2, 1.0 / nu), 1.0));
    return ad::div_colvec(kern, ad::row_sum(kern));
}

Mat soft_assign(const Mat& z, const Mat& centroids, double nu) {
    ad::NoGradGuard off;
    return soft_assign(ad::constant(z), ad::constant(centroids), nu).value();
}

Mat target_distribution(const Mat& q) {
    const Eigen::RowVectorXd f = q.colwise().sum();
    for (Eigen::Index j = 0; j < f.size(); ++j)
        if (!(f(j) > 0)) throw NumericError("cluster " + std::to_string(j) + " has no soft assignment mass");
    Mat p = q.cwiseProduct(q).array().rowwise() / f.array();
    const Eigen::VectorXd rs = p.rowwise().sum();
    return p.array().colwise() / rs.array();
}

namespace {
double plogp_sum(const Mat& p) {
    double s = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double v = p.data()[i];
        if (v > 0) s += v * std::log(v);
    }
    return s;
}
}  // namespace

Var clustering_loss(const Mat& p, const Var& q, double floor) {
    if (p.rows() != q.rows() || p.cols() != q.cols()) throw std::invalid_argument("clustering_loss: shape mismatch");
    const Var cross = ad::sum(ad::mul(ad::constant(p), ad::log(ad::clamp_min(q, floor))));
    return ad::add_scalar(ad::neg(cross), plogp_sum(p));
}

double clustering_loss(const Mat& p, const Mat& q, double floor) {
    ad::NoGradGuard off;
    return clustering_loss(p, ad::constant(q), floor).scalar();
}

namespace {

std::vector<int> assign_nearest(const Mat& x, const Mat& c, double* inertia) {
    std::vector<int> labels(static_cast<std::size_t>(x.rows()));
    double total = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::Index arg = 0;
        const double d = (c.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&arg);
        labels[static_cast<std::size_t>(i)] = static_cast<int>(arg);
        total += d;
    }
    if (inertia) *inertia = total;
    return labels;
}

Mat plus_plus_init(const Mat& x, int k, Rng& rng) {
    Mat c(k, x.cols());
    c.row(0) = x.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(x.rows()))));
    Eigen::VectorXd d2 = (x.rowwise() - c.row(0)).rowwise().squaredNorm();
    for (int j = 1; j < k; ++j) {
        const double total = d2.sum();
        Eigen::Index pick = 0;
        if (total > 0) {
            double r = rng.uniform(0.0, total);
            for (pick = 0; pick + 1 < x.rows(); ++pick) {
                r -= d2(pick);
                if (r < 0) break;
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(x.rows())));
        }
        c.row(j) = x.row(pick);
        d2 = d2.cwiseMin((x.rowwise() - c.row(j)).rowwise().squaredNorm());
    }
    return c;
}

}  // namespace

KMeansResult kmeans(const Mat& x, int k, int restarts, std::uint64_t seed, int max_iter) {
    if (k < 1 || k > x.rows()) throw ConfigError("k-means needs 1 <= K <= number of instances");
    Rng rng(seed);
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, restarts); ++r) {
        Mat c = plus_plus_init(x, k, rng);
        std::vector<int> labels = assign_nearest(x, c, nullptr);
        for (int it = 0; it < max_iter; ++it) {
            Mat sums = Mat::Zero(k, x.cols());
            std::vector<int> counts(static_cast<std::size_t>(k), 0);
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                sums.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
                ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
            }
            for (int j = 0; j < k; ++j)
                if (counts[static_cast<std::size_t>(j)] > 0) c.row(j) = sums.row(j) / counts[static_cast<std::size_t>(j)];
            std::vector<int> next = assign_nearest(x, c, nullptr);
            if (next == labels) break;
            labels = std::move(next);
        }
        double inertia = 0;
        labels = assign_nearest(x, c, &inertia);
        if (inertia < best.inertia) {
            best.inertia = inertia;
            best.centroids = c;
            best.labels = std::move(labels);
        }
    }
    return best;
}

EigengapConvention parse_convention(std::string_view name) {
    if (name == "spectral_gap") return EigengapConvention::spectral_gap;
    if (name == "literal_index") return EigengapConvention::literal_index;
    throw ConfigError("unknown eigengap convention '" + std::string(name) + "'");
}

std::string to_string(EigengapConvention c) {
    return c == EigengapConvention::spectral_gap ? "spectral_gap" : "literal_index";
}

EigengapResult infer_cluster_count(const Mat& z, EigengapConvention convention, int cap) {
    const auto n = z.rows();
    if (n < 3) throw DataError("cluster-count inference needs at least 3 instances");
    const Eigen::VectorXd norms = z.rowwise().norm();
    for (Eigen::Index i = 0; i < n; ++i)
        if (!(norms(i) > 0)) throw NumericError("instance " + std::to_string(i) + " has a zero embedding and is isolated");
    const Mat zn = z.array().colwise() / norms.array();
    EigengapResult res;
    if (((zn.rowwise() - zn.row(0)).rowwise().norm().array() < 1e-12).all()) {
        res.degenerate = true;
        res.k = 1;
        return res;
    }
    Mat s = zn * zn.transpose();
    s /= s.maxCoeff();
    const Mat s2 = s + s * s;
    const Eigen::VectorXd deg = s.rowwise().sum();
    for (Eigen::Index i = 0; i < n; ++i)
        if (!(deg(i) > 0)) throw NumericError("instance " + std::to_string(i) + " has nonpositive similarity degree");
    const Eigen::VectorXd inv = deg.cwiseSqrt().cwiseInverse();
    const Mat lap = inv.asDiagonal() * s2 * inv.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Mat> es(lap, Eigen::EigenvaluesOnly);
    const Eigen::VectorXd asc = es.eigenvalues();
    res.eigenvalues.assign(asc.data(), asc.data() + asc.size());
    std::reverse(res.eigenvalues.begin(), res.eigenvalues.end());

    if (convention == EigengapConvention::spectral_gap) {
        const int upper = static_cast<int>(std::min<Eigen::Index>(n - 1, cap));
        double best = -std::numeric_limits<double>::infinity();
        for (int k = 2; k <= upper; ++k) {
            const double gap = res.eigenvalues[static_cast<std::size_t>(k - 1)] - res.eigenvalues[static_cast<std::size_t>(k)];
            if (gap > best) {
                best = gap;
                res.k = k;
            }
        }
    } else {
        const int upper = static_cast<int>(std::min<Eigen::Index>(n, cap));
        double best = -std::numeric_limits<double>::infinity();
        for (int i = 2; i <= upper; ++i) {
            const double gap = asc(i - 1) - asc(i - 2);
            if (gap > best) {
                best = gap;
                res.k = i;
            }
        }
    }
    return res;
}

void AnnotatorConfig::validate() const {
    if (dim < 1 || heads < 1 || dim % heads != 0) throw ConfigError("fusion head count must divide the fusion width");
    if (!(nu > 0)) throw ConfigError("nu must be positive");
    if (max_iterations < 0 || kmeans_restarts < 1 || eigengap_cap < 1) throw ConfigError("annotator schedule values out of range");
    if (!(q_floor > 0)) throw ConfigError("q floor must be positive");
}

namespace {

std::vector<int> row_argmax(const Mat& q) {
    std::vector<int> out(static_cast<std::size_t>(q.rows()));
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        Eigen::Index arg = 0;
        q.row(i).maxCoeff(&arg);
        out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return out;
}

}  // namespace

AnnotatorResult train_annotator(const Mat& xi, const Mat& delta, int k, const AnnotatorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (xi.rows() != delta.rows() || xi.cols() != delta.cols()) throw DataError("adapted anomalies and deviations differ in shape");
    const auto n = xi.rows();
    if (n < 1) throw DataError("no anomalies to annotate");
    AnnotatorResult res;
    res.fusion = FusionBlock(static_cast<int>(xi.cols()), cfg.dim, cfg.heads, derive_seed(seed, 51));
    FusionBlock& block = res.fusion;
    const Var xv = ad::constant(xi);
    const Var dv = ad::constant(delta);

    Mat z0 = block.forward(xi, delta);
    if (k <= 0) {
        res.eigengap = infer_cluster_count(z0, cfg.convention, cfg.eigengap_cap);
        res.inferred = true;
        k = res.eigengap.k;
    }
    if (k > n) throw ConfigError("cluster count " + std::to_string(k) + " exceeds the " + std::to_string(n) + " anomalies");
    res.k = k;

    const KMeansResult km = kmeans(z0, k, cfg.kmeans_restarts, derive_seed(seed, 52));
    Var mu = ad::parameter(km.centroids);
    std::vector<int> prev = km.labels;

    if (k > 1) {
        nn::ParamList params = block.parameters();
        params.push_back({"centroids", mu});
        nn::Adam opt(params, cfg.adam);
        for (int it = 0; it < cfg.max_iterations; ++it) {
            const Var z = block.forward(xv, dv);
            const Var q = soft_assign(z, mu, cfg.nu);
            const Mat p = target_distribution(q.value());
            opt.minimize(clustering_loss(p, q, cfg.q_floor));
            std::vector<int> labels = row_argmax(q.value());
            std::size_t changed = 0;
            for (std::size_t i = 0; i < labels.size(); ++i) changed += labels[i] != prev[i];
            const double frac = static_cast<double>(changed) / static_cast<double>(n);
            res.change_trace.push_back(frac);
            prev = std::move(labels);
            res.iterations = it + 1;
            if (frac < cfg.change_tolerance && it > 0) break;
        }
    }

    ClusterState& st = res.state;
    st.nu = cfg.nu;
    st.z = block.forward(xi, delta);
    st.centroids = mu.value();
    st.q = soft_assign(st.z, st.centroids, cfg.nu);
    st.p = k > 1 ? target_distribution(st.q) : st.q;
    res.labels = row_argmax(st.q);
    res.confidence.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) res.confidence[static_cast<std::size_t>(i)] = st.q.row(i).maxCoeff();
    return res;
}

json annotator_config_to_json(const AnnotatorConfig& c) {
    return json{{"dim", c.dim},
                {"heads", c.heads},
                {"nu", c.nu},
                {"learning_rate", c.adam.learning_rate},
                {"max_iterations", c.max_iterations},
                {"change_tolerance", c.change_tolerance},
                {"kmeans_restarts", c.kmeans_restarts},
                {"q_floor", c.q_floor},
                {"eigengap_cap", c.eigengap_cap},
                {"convention", to_string(c.convention)}};
}

AnnotatorConfig annotator_config_from_json(const json& j) {
    AnnotatorConfig c;
    c.dim = j.at("dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.nu = j.at("nu").get<double>();
    c.adam.learning_rate = j.at("learning_rate").get<double>();
    c.max_iterations = j.at("max_iterations").get<int>();
    c.change_tolerance = j.at("change_tolerance").get<double>();
    c.kmeans_restarts = j.at("kmeans_restarts").get<int>();
    c.q_floor = j.at("q_floor").get<double>();
    c.eigengap_cap = j.at("eigengap_cap").get<int>();
    c.convention = parse_convention(j.at("convention").get<std::string>());
    return c;
}

}  // namespace facd::annot
