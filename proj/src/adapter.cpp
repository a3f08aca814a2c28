#include "facd/adapter.hpp"

#include "facd/errors.hpp"
#include "facd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace facd::adapt {

void AdapterConfig::validate() const {
    if (encoder.empty()) throw ConfigError("adapter encoder widths must name the latent width");
    for (int w : encoder)
        if (w <= 0) throw ConfigError("adapter encoder widths must be positive");
    for (int w : critic)
        if (w <= 0) throw ConfigError("adapter critic widths must be positive");
    if (epochs < 0) throw ConfigError("adapter epochs must be nonnegative");
    if (batch_size < 1 || critic_steps < 1 || pool_size < 1) throw ConfigError("adapter schedule values must be positive");
}

Adapter::Adapter(int n_features, int n_targets, AdapterConfig c, std::uint64_t seed) : cfg(std::move(c)) {
    cfg.validate();
    encoder = nn::Mlp(detect::encoder_spec(n_features, cfg.encoder), derive_seed(seed, 41), "encoder");
    decoder = nn::Mlp(detect::decoder_spec(n_features, cfg.encoder), derive_seed(seed, 42), "decoder");
    critic = nn::Mlp(detect::critic_spec(n_features, cfg.critic), derive_seed(seed, 43), "critic");
    style = ad::parameter(Mat::Zero(n_targets, cfg.encoder.back()));
}

namespace {

Mat domain_indicator(const std::vector<int>& domains, int n_targets) {
    Mat b = Mat::Zero(static_cast<Eigen::Index>(domains.size()), n_targets);
    for (std::size_t i = 0; i < domains.size(); ++i) {
        const int d = domains[i];
        if (d < -1 || d >= n_targets) throw DataError("domain id " + std::to_string(d) + " is out of range");
        if (d >= 0) b(static_cast<Eigen::Index>(i), d) = 1.0;
    }
    return b;
}

}  // namespace

Var Adapter::adapt(const Var& x, const std::vector<int>& domains) const {
    if (static_cast<Eigen::Index>(domains.size()) != x.rows()) throw std::invalid_argument("adapt: one domain id per row");
    const Mat b = domain_indicator(domains, n_targets());
    Var z = encoder.forward(x);
    const bool any_target = std::any_of(domains.begin(), domains.end(), [](int d) { return d >= 0; });
    if (any_target) z = ad::sub(z, ad::matmul(ad::constant(b), style));
    return decoder.forward(z);
}

Mat Adapter::adapt(const Mat& x, const std::vector<int>& domains) const {
    ad::NoGradGuard off;
    return adapt(ad::constant(x), domains).value();
}

Mat Adapter::encode(const Mat& x) const { return encoder.predict(x); }

nn::ParamList Adapter::generator_parameters() const {
    nn::ParamList p = encoder.parameters();
    for (auto& q : decoder.parameters()) p.push_back(q);
    p.push_back({"style", style});
    return p;
}

json Adapter::to_json() const {
    json means = json::array();
    for (const auto& m : frame.targets) means.push_back(nn::matrix_to_json(m));
    return json{{"format", nn::kCheckpointFormat},
                {"kind", "adapter"},
                {"n_features", n_features()},
                {"n_targets", n_targets()},
                {"config", adapter_config_to_json(cfg)},
                {"encoder", nn::params_to_json(encoder.parameters())},
                {"decoder", nn::params_to_json(decoder.parameters())},
                {"critic", nn::params_to_json(critic.parameters())},
                {"style", nn::matrix_to_json(style.value())},
                {"frame", {{"reference", nn::matrix_to_json(frame.reference)}, {"targets", means}}}};
}

Adapter Adapter::from_json(const json& j) {
    if (j.value("kind", "") != "adapter") throw DataError("not an adapter checkpoint");
    Adapter a(j.at("n_features").get<int>(), j.at("n_targets").get<int>(), adapter_config_from_json(j.at("config")), 0);
    nn::params_from_json(j.at("encoder"), a.encoder.parameters());
    nn::params_from_json(j.at("decoder"), a.decoder.parameters());
    nn::params_from_json(j.at("critic"), a.critic.parameters());
    Mat s = nn::matrix_from_json(j.at("style"));
    if (s.rows() != a.style.rows() || s.cols() != a.style.cols()) throw DataError("style matrix has the wrong shape");
    a.style.mutable_value() = std::move(s);
    const auto& f = j.at("frame");
    if (nn::matrix_from_json(f.at("reference")).size() > 0) a.frame.reference = nn::matrix_from_json(f.at("reference")).row(0);
    for (const auto& m : f.at("targets")) a.frame.targets.push_back(nn::matrix_from_json(m).row(0));
    return a;
}

double median_bandwidth(const Mat& e) {
    std::vector<double> d;
    const auto n = e.rows();
    d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((e.row(i) - e.row(j)).norm());
    if (d.empty()) return 1.0;
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid > 0 ? *mid : 1.0;
}

KinResult kin_match(const Mat& query, const Mat& pool) {
    if (pool.rows() == 0) throw DataError("kin search pool is empty");
    if (query.cols() != pool.cols()) throw std::invalid_argument("kin_match: embedding width mismatch");
    KinResult r;
    r.bandwidth = median_bandwidth(query);
    const double inv = 1.0 / (2.0 * r.bandwidth * r.bandwidth);
    const Eigen::VectorXd qn = query.rowwise().squaredNorm();
    const Eigen::RowVectorXd pn = pool.rowwise().squaredNorm().transpose();
    const Mat cross = query * pool.transpose();
    r.index.resize(static_cast<std::size_t>(query.rows()));
    for (Eigen::Index i = 0; i < query.rows(); ++i) {
        double best = -std::numeric_limits<double>::infinity();
        Eigen::Index arg = 0;
        for (Eigen::Index j = 0; j < pool.rows(); ++j) {
            const double d2 = std::max(0.0, qn(i) + pn(j) - 2.0 * cross(i, j));
            const double log_k = -d2 * inv;
            if (log_k > best) {
                best = log_k;
                arg = j;
            }
        }
        r.index[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arg);
    }
    return r;
}

Mat kin_query(const Adapter& model, const Mat& x, const std::vector<int>& domains) {
    Mat e = model.encode(x);
    if (model.cfg.kin_space == KinSpace::literal) return e;
    for (std::size_t i = 0; i < domains.size(); ++i) {
        const int d = domains[i];
        if (d < 0) continue;
        if (static_cast<std::size_t>(d) >= model.frame.targets.size()) throw DataError("no kin frame for domain " + std::to_string(d));
        e.row(static_cast<Eigen::Index>(i)) += model.frame.reference - model.frame.targets[static_cast<std::size_t>(d)];
    }
    return e;
}

namespace {

void refresh_frame(Adapter& model, const Mat& reference, const std::vector<Mat>& targets) {
    model.frame.reference = model.encode(reference).colwise().mean();
    model.frame.targets.clear();
    for (const auto& t : targets) model.frame.targets.push_back(model.encode(t).colwise().mean());
}

Mat rows_of(const Mat& x, const std::vector<std::size_t>& idx) {
    Mat out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

}  // namespace

Adapter train_phase2(const Mat& reference, const std::vector<Mat>& targets, const AdapterConfig& cfg, std::uint64_t seed,
                     TrainLog* log) {
    if (reference.rows() < 2) throw DataError("phase II needs at least two reference instances");
    for (std::size_t k = 0; k < targets.size(); ++k) {
        if (targets[k].rows() < 2)
            throw DataError("target dataset " + std::to_string(k) + " has fewer than two instances after exclusion");
        if (targets[k].cols() != reference.cols()) throw DataError("target dataset " + std::to_string(k) + " has the wrong width");
    }
    const int n_targets = static_cast<int>(targets.size());
    Adapter model(static_cast<int>(reference.cols()), n_targets, cfg, seed);
    model.frame.targets.assign(targets.size(), Eigen::RowVectorXd::Zero(cfg.encoder.back()));
    model.frame.reference = Eigen::RowVectorXd::Zero(cfg.encoder.back());

    // Stacked training set with a domain id per row.
    std::vector<std::pair<int, Eigen::Index>> rows;
    if (cfg.include_reference || targets.empty())
        for (Eigen::Index i = 0; i < reference.rows(); ++i) rows.emplace_back(-1, i);
    for (int k = 0; k < n_targets; ++k)
        for (Eigen::Index i = 0; i < targets[static_cast<std::size_t>(k)].rows(); ++i) rows.emplace_back(k, i);

    Rng rng(derive_seed(seed, 44));
    nn::Adam gen_opt(model.generator_parameters(), cfg.adam);
    nn::Adam critic_opt(model.critic.parameters(), cfg.adam);
    const std::size_t batch = std::min<std::size_t>(rows.size(), static_cast<std::size_t>(cfg.batch_size));
    const auto n_ref = static_cast<std::size_t>(reference.rows());
    const std::size_t pool_n = std::min<std::size_t>(n_ref, static_cast<std::size_t>(cfg.pool_size));
    auto critic_fn = [&model](const Var& x) { return model.critic.forward(x); };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.kin_space == KinSpace::centered) refresh_frame(model, reference, targets);
        const auto order = rng.permutation(rows.size());
        double gsum = 0, csum = 0;
        int batches = 0;
        for (std::size_t b = 0; b < rows.size(); b += batch) {
            const std::size_t end = std::min(rows.size(), b + batch);
            Mat xb(static_cast<Eigen::Index>(end - b), reference.cols());
            std::vector<int> dom(end - b);
            for (std::size_t i = b; i < end; ++i) {
                const auto [d, r] = rows[order[i]];
                dom[i - b] = d;
                xb.row(static_cast<Eigen::Index>(i - b)) = d < 0 ? reference.row(r) : targets[static_cast<std::size_t>(d)].row(r);
            }

            Mat xplus = xb;
            std::vector<std::size_t> tgt_rows;
            for (std::size_t i = 0; i < dom.size(); ++i)
                if (dom[i] >= 0) tgt_rows.push_back(i);
            if (!tgt_rows.empty()) {
                const Mat pool_x = pool_n == n_ref ? reference : rows_of(reference, rng.sample_without_replacement(n_ref, pool_n));
                std::vector<int> tdom;
                for (std::size_t i : tgt_rows) tdom.push_back(dom[i]);
                const Mat q = kin_query(model, rows_of(xb, tgt_rows), tdom);
                const KinResult kin = kin_match(q, model.encode(pool_x));
                for (std::size_t t = 0; t < tgt_rows.size(); ++t)
                    xplus.row(static_cast<Eigen::Index>(tgt_rows[t])) = pool_x.row(static_cast<Eigen::Index>(kin.index[t]));
            }

            const Var x = ad::constant(xb);
            const Var xp = ad::constant(xplus);
            double closs = 0;
            for (int s = 0; s < cfg.critic_steps; ++s) {
                const Mat fake = model.adapt(xb, dom);
                Var penalty = nn::gradient_penalty(critic_fn, xplus, fake, rng);
                Var loss = detect::critic_loss(model.critic.forward(xp), model.critic.forward(ad::constant(fake)), penalty,
                                               cfg.weights.lambda);
                closs = loss.scalar();
                if (!std::isfinite(closs)) {
                    std::ostringstream msg;
                    msg << "phase II training diverged at epoch " << epoch << ": critic loss = " << closs
                        << ", gradient penalty = " << penalty.scalar();
                    throw NumericError(msg.str());
                }
                critic_opt.minimize(loss);
            }

            const Var xhat = model.adapt(x, dom);
            const Var loss = detect::generator_loss(xp, xhat, model.critic.forward(xhat), cfg.weights);
            if (!std::isfinite(loss.scalar())) {
                std::ostringstream msg;
                msg << "phase II training diverged at epoch " << epoch << ": generator loss = " << loss.scalar()
                    << ", critic loss = " << closs;
                throw NumericError(msg.str());
            }
            gen_opt.minimize(loss);
            gsum += loss.scalar();
            csum += closs;
            ++batches;
        }
        if (log && batches > 0) {
            log->generator_loss.push_back(gsum / batches);
            log->critic_loss.push_back(csum / batches);
        }
    }
    if (cfg.kin_space == KinSpace::centered) refresh_frame(model, reference, targets);
    return model;
}

Mat adapt_anomalies(const Adapter& model, const Mat& anomalies, const std::vector<int>& domains) {
    if (anomalies.cols() != model.n_features()) throw DataError("anomaly width does not match the adapter");
    if (anomalies.rows() == 0) return Mat(0, anomalies.cols());
    return model.adapt(anomalies, domains);
}

json adapter_config_to_json(const AdapterConfig& c) {
    return json{{"encoder", c.encoder},
                {"critic", c.critic},
                {"alpha", c.weights.alpha},
                {"beta", c.weights.beta},
                {"lambda", c.weights.lambda},
                {"learning_rate", c.adam.learning_rate},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"critic_steps", c.critic_steps},
                {"pool_size", c.pool_size},
                {"kin_space", c.kin_space == KinSpace::centered ? "centered" : "literal"},
                {"include_reference", c.include_reference}};
}

AdapterConfig adapter_config_from_json(const json& j) {
    AdapterConfig c;
    c.encoder = j.at("encoder").get<std::vector<int>>();
    c.critic = j.at("critic").get<std::vector<int>>();
    c.weights.alpha = j.at("alpha").get<double>();
    c.weights.beta = j.at("beta").get<double>();
    c.weights.lambda = j.at("lambda").get<double>();
    c.adam.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.critic_steps = j.at("critic_steps").get<int>();
    c.pool_size = j.at("pool_size").get<int>();
    const auto ks = j.at("kin_space").get<std::string>();
    if (ks == "centered") c.kin_space = KinSpace::centered;
    else if (ks == "literal") c.kin_space = KinSpace::literal;
    else throw ConfigError("unknown kin space '" + ks + "'");
    c.include_reference = j.at("include_reference").get<bool>();
    return c;
}

}  // namespace facd::adapt
