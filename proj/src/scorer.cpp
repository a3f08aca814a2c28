#include "facd/scorer.hpp"

#include "facd/errors.hpp"
#include "facd/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace facd::score {

namespace {
constexpr double kPi = std::numbers::pi;

double offdiag_sum(const Mat& g) { return g.sum() - g.trace(); }
}  // namespace

double linear_mmd2_unbiased(const Mat& a, const Mat& b) {
    if (a.rows() < 2 || b.rows() < 2) throw std::invalid_argument("linear_mmd2_unbiased: each group needs at least 2 rows");
    if (a.cols() != b.cols()) throw std::invalid_argument("linear_mmd2_unbiased: dimension mismatch");
    const double m = static_cast<double>(a.rows());
    const double n = static_cast<double>(b.rows());
    const Mat gaa = a * a.transpose();
    const Mat gbb = b * b.transpose();
    const double cross = (a.colwise().sum() * b.colwise().sum().transpose())(0, 0);
    return offdiag_sum(gaa) / (m * (m - 1)) + offdiag_sum(gbb) / (n * (n - 1)) - 2.0 * cross / (m * n);
}

double discrete_gamma(int si, int sj, double m, double n) {
    if (m < 2 || n < 2) throw std::invalid_argument("discrete_gamma: m and n must be at least 2");
    if (si == 0 && sj == 0) return 1.0 / (m * (m - 1));
    if (si == 1 && sj == 1) return 1.0 / (n * (n - 1));
    return -1.0 / (m * n);
}

GammaVariant parse_variant(std::string_view name) {
    if (name == "sign_consistent") return GammaVariant::sign_consistent;
    if (name == "as_printed") return GammaVariant::as_printed;
    throw ConfigError("unknown gamma variant '" + std::string(name) + "'");
}

std::string to_string(GammaVariant v) {
    return v == GammaVariant::sign_consistent ? "sign_consistent" : "as_printed";
}

namespace {

void check_populations(double m, double n) {
    if (m * (m - 1) <= 0 || n * (n - 1) <= 0 || m <= 1 || n <= 1) {
        std::ostringstream msg;
        msg << "degenerate populations: m~ = " << m << ", n~ = " << n;
        throw NumericError(msg.str());
    }
}

double cross_sign(GammaVariant v) { return v == GammaVariant::sign_consistent ? -1.0 : 1.0; }

}  // namespace

double gamma_c(double pi, double pj, double m, double n, GammaVariant variant) {
    check_populations(m, n);
    const double si = std::sin(kPi * pi), sj = std::sin(kPi * pj);
    const double ui = si / (kPi * pi), uj = sj / (kPi * pj);
    const double vi = si / (kPi * (1 - pi)), vj = sj / (kPi * (1 - pj));
    return ui * uj / (m * (m - 1)) + cross_sign(variant) * (vi * uj + ui * vj) / (m * n) + vi * vj / (n * (n - 1));
}

Var scorer_loss_var(const Mat& gram, const Var& p, double m, double n, GammaVariant variant) {
    check_populations(m, n);
    if (p.cols() != 1 || p.rows() != gram.rows()) throw std::invalid_argument("scorer_loss: score vector shape mismatch");
    const Var s = ad::sin(ad::scale(p, kPi));
    const Var u = ad::div(s, ad::scale(p, kPi));
    const Var v = ad::div(s, ad::scale(ad::add_scalar(ad::neg(p), 1.0), kPi));
    const Var k = ad::constant(gram);
    const Var ku = ad::matmul(k, u);
    const Var kv = ad::matmul(k, v);
    const Var uu = ad::sum(ad::mul(u, ku));
    const Var uv = ad::sum(ad::mul(u, kv));
    const Var vv = ad::sum(ad::mul(v, kv));
    Var total = ad::add(ad::scale(uu, 1.0 / (m * (m - 1))), ad::scale(vv, 1.0 / (n * (n - 1))));
    total = ad::add(total, ad::scale(uv, 2.0 * cross_sign(variant) / (m * n)));
    return ad::neg(total);
}

double scorer_loss(const Mat& deviations, const Vec& p, GammaVariant variant) {
    const auto big_n = deviations.rows();
    if (big_n < 4) throw std::invalid_argument("scorer_loss: need at least 4 instances");
    if (p.size() != big_n) throw std::invalid_argument("scorer_loss: score count mismatch");
    const double n = p.sum();
    const double m = static_cast<double>(big_n) - n;
    Mat gram = deviations * deviations.transpose();
    gram.diagonal().setZero();
    ad::NoGradGuard off;
    return scorer_loss_var(gram, ad::constant(p), m, n, variant).scalar();
}

void ScorerConfig::validate() const {
    for (int w : hidden)
        if (w <= 0) throw ConfigError("scorer widths must be positive");
    if (!(eta > 0 && eta < 0.5)) throw ConfigError("eta must lie in (0, 0.5)");
    if (steps_per_epoch < 1 || max_epochs < 1) throw ConfigError("scorer schedule must be positive");
    if (min_epochs < 0 || warm_start_steps < 0) throw ConfigError("scorer counts must be nonnegative");
    if (!(tolerance > 0)) throw ConfigError("scorer tolerance must be positive");
}

nn::MlpSpec scorer_spec(int n_features, const std::vector<int>& hidden) {
    nn::MlpSpec s;
    s.widths.push_back(n_features);
    s.widths.insert(s.widths.end(), hidden.begin(), hidden.end());
    s.widths.push_back(1);
    return s;
}

Vec ScorerModel::logits(const Mat& deviations) const {
    if (deviations.cols() != center.size()) throw DataError("deviation width does not match the scorer");
    const Mat x = deviations.rowwise() - center;
    Vec l = net.predict(x).col(0);
    return flipped ? Vec(-l) : l;
}

Vec ScorerModel::scores(const Mat& deviations) const {
    const Vec l = logits(deviations);
    return l.unaryExpr([this](double t) { return std::clamp(1.0 / (1.0 + std::exp(-t)), eta, 1.0 - eta); });
}

json ScorerModel::to_json() const {
    return json{{"format", nn::kCheckpointFormat},
                {"kind", "scorer"},
                {"spec", nn::spec_to_json(net.spec())},
                {"params", nn::params_to_json(net.parameters())},
                {"center", nn::matrix_to_json(center)},
                {"flipped", flipped},
                {"eta", eta}};
}

ScorerModel ScorerModel::from_json(const json& j) {
    if (j.value("kind", "") != "scorer") throw DataError("not a scorer checkpoint");
    ScorerModel m;
    m.net = nn::Mlp(nn::spec_from_json(j.at("spec")), 0, "scorer");
    nn::params_from_json(j.at("params"), m.net.parameters());
    m.center = nn::matrix_from_json(j.at("center")).row(0);
    m.flipped = j.at("flipped").get<bool>();
    m.eta = j.at("eta").get<double>();
    return m;
}

namespace {

Var clamped_scores(const nn::Mlp& net, const Var& x, double eta) {
    return ad::clamp(ad::sigmoid(net.forward(x)), eta, 1.0 - eta);
}

// Stable mean binary cross-entropy on logits.
Var bce_with_logits(const Var& logits, const Mat& target) {
    const Var softplus = ad::add(ad::relu(logits), ad::log(ad::add_scalar(ad::exp(ad::neg(ad::abs(logits))), 1.0)));
    return ad::mean(ad::sub(softplus, ad::mul(ad::constant(target), logits)));
}

// Rank of each row norm scaled to [0, 1]; ties share the lower rank.
Mat rank_targets(const Mat& x) {
    const Vec norms = x.rowwise().norm();
    std::vector<std::size_t> order(static_cast<std::size_t>(norms.size()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms(a) < norms(b); });
    Mat t(norms.size(), 1);
    const double denom = std::max<double>(1.0, static_cast<double>(norms.size() - 1));
    for (std::size_t r = 0; r < order.size(); ++r) t(static_cast<Eigen::Index>(order[r]), 0) = static_cast<double>(r) / denom;
    return t;
}

}  // namespace

ScorerResult train_scorer(const Mat& deviations, const ScorerConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto big_n = deviations.rows();
    if (big_n < 4) throw DataError("the scorer needs at least 4 instances");
    if (!deviations.allFinite()) throw NumericError("non-finite reconstruction deviations");

    ScorerResult res;
    ScorerModel& model = res.model;
    model.eta = cfg.eta;
    model.center = cfg.center ? Eigen::RowVectorXd(deviations.colwise().mean()) : Eigen::RowVectorXd::Zero(deviations.cols());
    model.net = nn::Mlp(scorer_spec(static_cast<int>(deviations.cols()), cfg.hidden), derive_seed(seed, 21), "scorer");

    const Mat x = deviations.rowwise() - model.center;
    const Var xv = ad::constant(x);
    Mat gram = x * x.transpose();
    gram.diagonal().setZero();
    nn::Adam opt(model.net.parameters(), cfg.adam);

    if (cfg.warm_start_steps > 0) {
        const Mat target = rank_targets(x);
        for (int s = 0; s < cfg.warm_start_steps; ++s) opt.minimize(bce_with_logits(model.net.forward(xv), target));
    }

    auto current_sum = [&] {
        ad::NoGradGuard off;
        return clamped_scores(model.net, xv, cfg.eta).value().sum();
    };
    const double total = static_cast<double>(big_n);
    double n_tilde = current_sum();
    int epoch = 0;
    for (; epoch < cfg.max_epochs; ++epoch) {
        for (int s = 0; s < cfg.steps_per_epoch; ++s) {
            const Var p = clamped_scores(model.net, xv, cfg.eta);
            opt.minimize(scorer_loss_var(gram, p, total - n_tilde, n_tilde, cfg.variant));
        }
        const double next = current_sum();
        res.n_trace.push_back(next);
        const bool settled = std::abs(next - n_tilde) < cfg.tolerance && epoch + 1 >= cfg.min_epochs;
        n_tilde = next;
        if (settled) {
            ++epoch;
            break;
        }
    }
    res.epochs = epoch;

    Vec p = clamped_scores(model.net, xv, cfg.eta).value().col(0);
    const Vec norms = x.rowwise().norm();
    const double w_anom = p.dot(norms) / p.sum();
    const double w_norm = (Vec::Ones(big_n) - p).dot(norms) / (total - p.sum());
    model.flipped = w_anom < w_norm;

    res.scores.logit = model.logits(deviations);
    res.scores.p = model.scores(deviations);
    res.scores.n_tilde = res.scores.p.sum();
    res.scores.m_tilde = total - res.scores.n_tilde;

    const double spread = res.scores.p.maxCoeff() - res.scores.p.minCoeff();
    if (spread < cfg.collapse_threshold) {
        res.collapsed = true;
        std::ostringstream msg;
        msg << "scores collapsed: spread " << spread << " after " << res.epochs << " epochs, n~ = " << res.scores.n_tilde;
        res.diagnostics = msg.str();
    }
    return res;
}

ThresholdRule ThresholdRule::parse(std::string_view text) {
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) throw ConfigError("threshold rule must look like kind:value, got '" + std::string(text) + "'");
    const std::string_view kind = text.substr(0, colon);
    const std::string value(text.substr(colon + 1));
    ThresholdRule r;
    if (kind == "quantile") r.kind = Kind::quantile;
    else if (kind == "count") r.kind = Kind::count;
    else if (kind == "absolute") r.kind = Kind::absolute;
    else throw ConfigError("unknown threshold rule '" + std::string(kind) + "'");
    double v = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size()) throw ConfigError("bad threshold value '" + value + "'");
    r.value = v;
    if (r.kind == Kind::quantile && (v < 0 || v > 1)) throw ConfigError("quantile must lie in [0, 1]");
    if (r.kind == Kind::count && (v < 0 || v != std::floor(v))) throw ConfigError("count must be a nonnegative integer");
    return r;
}

std::string ThresholdRule::str() const {
    std::ostringstream s;
    s << (kind == Kind::quantile ? "quantile" : kind == Kind::count ? "count" : "absolute") << ':' << value;
    return s.str();
}

std::vector<std::size_t> top_k(const Vec& scores, std::size_t k) {
    const auto n = static_cast<std::size_t>(scores.size());
    if (k > n) throw std::invalid_argument("top_k: k exceeds the number of instances");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
    });
    order.resize(k);
    return order;
}

std::vector<std::uint8_t> label_by_threshold(const Vec& p, const ThresholdRule& rule) {
    const auto n = static_cast<std::size_t>(p.size());
    std::vector<std::uint8_t> flags(n, 0);
    if (rule.kind == ThresholdRule::Kind::absolute) {
        for (std::size_t i = 0; i < n; ++i) flags[i] = p(static_cast<Eigen::Index>(i)) > rule.value;
        return flags;
    }
    std::size_t k = 0;
    if (rule.kind == ThresholdRule::Kind::count) {
        if (rule.value > static_cast<double>(n)) throw ConfigError("threshold count exceeds the number of instances");
        k = static_cast<std::size_t>(rule.value);
    } else {
        k = static_cast<std::size_t>(std::llround((1.0 - rule.value) * static_cast<double>(n)));
    }
    for (std::size_t i : top_k(p, k)) flags[i] = 1;
    return flags;
}

std::pair<double, double> wilson_interval(int successes, int trials, double z) {
    if (trials <= 0) return {0.0, 1.0};
    const double nt = trials;
    const double ph = successes / nt;
    const double z2 = z * z;
    const double centre = (ph + z2 / (2 * nt)) / (1 + z2 / nt);
    const double half = z * std::sqrt(ph * (1 - ph) / nt + z2 / (4 * nt * nt)) / (1 + z2 / nt);
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

std::vector<TrendRow> shift_deviation_trend(const TrendSpec& spec) {
    if (spec.ratio < 1) throw ConfigError("trend ratio m/n must be at least 1");
    Rng setup(derive_seed(spec.seed, 31));
    Eigen::RowVectorXd mu = setup.normal_matrix(1, spec.dim);
    mu *= spec.mean_gap / mu.norm();
    Eigen::RowVectorXd b = setup.normal_matrix(1, spec.dim);
    b *= spec.shift_norm / std::max(b.norm(), 1e-300);

    std::vector<TrendRow> rows;
    for (std::size_t g = 0; g < spec.n_grid.size(); ++g) {
        TrendRow row;
        row.n = spec.n_grid[g];
        row.m = static_cast<int>(std::lround(spec.ratio * row.n));
        Rng rng(derive_seed(spec.seed, 100 + static_cast<std::uint64_t>(row.n)));
        int hits = 0;
        double stat_sum = 0;
        for (int t = 0; t < spec.trials; ++t) {
            const Mat inl = rng.normal_matrix(row.m, spec.dim);
            const Mat anom = rng.normal_matrix(row.n, spec.dim).rowwise() + mu;
            const Mat inl_s = (inl + rng.normal_matrix(row.m, spec.dim, spec.shift_sigma)).rowwise() + b;
            const Mat anom_s = (anom + rng.normal_matrix(row.n, spec.dim, spec.shift_sigma)).rowwise() + b;
            const double stat = std::abs(linear_mmd2_unbiased(inl_s, anom_s) - linear_mmd2_unbiased(inl, anom));
            stat_sum += stat;
            hits += stat >= spec.epsilon;
        }
        row.rate = static_cast<double>(hits) / spec.trials;
        std::tie(row.lo, row.hi) = wilson_interval(hits, spec.trials);
        row.mean_statistic = stat_sum / spec.trials;
        rows.push_back(row);
    }
    return rows;
}

json scorer_config_to_json(const ScorerConfig& c) {
    return json{{"hidden", c.hidden},
                {"learning_rate", c.adam.learning_rate},
                {"variant", to_string(c.variant)},
                {"eta", c.eta},
                {"steps_per_epoch", c.steps_per_epoch},
                {"max_epochs", c.max_epochs},
                {"min_epochs", c.min_epochs},
                {"tolerance", c.tolerance},
                {"center", c.center},
                {"warm_start_steps", c.warm_start_steps},
                {"collapse_threshold", c.collapse_threshold}};
}

ScorerConfig scorer_config_from_json(const json& j) {
    ScorerConfig c;
    c.hidden = j.at("hidden").get<std::vector<int>>();
    c.adam.learning_rate = j.at("learning_rate").get<double>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.eta = j.at("eta").get<double>();
    c.steps_per_epoch = j.at("steps_per_epoch").get<int>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.min_epochs = j.at("min_epochs").get<int>();
    c.tolerance = j.at("tolerance").get<double>();
    c.center = j.at("center").get<bool>();
    c.warm_start_steps = j.at("warm_start_steps").get<int>();
    c.collapse_threshold = j.at("collapse_threshold").get<double>();
    return c;
}

}  // namespace facd::score
