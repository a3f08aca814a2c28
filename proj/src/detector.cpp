#include "facd/detector.hpp"

#include "facd/errors.hpp"
#include "facd/rng.hpp"

#include <cmath>
#include <sstream>

namespace facd::detect {

Var memory_attention(const Var& z, const Var& bank, double tau) {
    Var logits = ad::scale(ad::matmul(z, ad::transpose(bank)), 1.0 / tau);
    return ad::matmul(ad::softmax_rows(logits), bank);
}

MemoryBank::MemoryBank(int size, int dim, double tau, bool strict)
    : entries_(Mat::Zero(size, dim)), size_(size), tau_(tau), strict_(strict) {
    if (size < 1) throw ConfigError("memory size must be at least 1");
    if (!(tau > 0)) throw ConfigError("memory temperature must be positive");
}

Var MemoryBank::read(const Var& z) const {
    if (!filled()) {
        if (strict_) throw NumericError("memory bank read before it was filled");
        return z;
    }
    return memory_attention(z, ad::constant(entries_), tau_);
}

Mat MemoryBank::attention_weights(const Mat& z) const {
    ad::NoGradGuard off;
    Var logits = ad::scale(ad::matmul(ad::constant(z), ad::constant(entries_.transpose())), 1.0 / tau_);
    return ad::softmax_rows(logits).value();
}

void MemoryBank::enqueue(const Mat& rows) {
    if (rows.cols() != entries_.cols()) throw std::invalid_argument("memory enqueue: width mismatch");
    if (rows.rows() > size_) throw std::invalid_argument("memory enqueue: batch larger than the bank");
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        entries_.row(cursor_) = rows.row(i);
        cursor_ = (cursor_ + 1) % size_;
    }
    count_ = std::min(size_, count_ + static_cast<int>(rows.rows()));
}

json MemoryBank::to_json() const {
    return json{{"entries", nn::matrix_to_json(entries_)},
                {"size", size_},
                {"count", count_},
                {"cursor", cursor_},
                {"tau", tau_},
                {"strict", strict_}};
}

MemoryBank MemoryBank::from_json(const json& j) {
    Mat e = nn::matrix_from_json(j.at("entries"));
    MemoryBank b(j.at("size").get<int>(), static_cast<int>(e.cols()), j.at("tau").get<double>(), j.at("strict").get<bool>());
    b.entries_ = std::move(e);
    b.count_ = j.at("count").get<int>();
    b.cursor_ = j.at("cursor").get<int>();
    return b;
}

Var generator_loss(const Var& x, const Var& xhat, const Var& critic_scores, const LossWeights& w) {
    if (x.rows() != xhat.rows() || x.cols() != xhat.cols()) throw std::invalid_argument("generator_loss: shape mismatch");
    Var rec = ad::mean(ad::row_sum(ad::abs(ad::sub(x, xhat))));
    return ad::sub(ad::scale(rec, w.alpha), ad::scale(ad::mean(critic_scores), w.beta));
}

Var critic_loss(const Var& real_scores, const Var& fake_scores, const Var& penalty, double lambda) {
    if (real_scores.rows() != fake_scores.rows() || real_scores.cols() != fake_scores.cols())
        throw std::invalid_argument("critic_loss: score shapes differ");
    return ad::add(ad::sub(ad::mean(fake_scores), ad::mean(real_scores)), ad::scale(penalty, lambda));
}

void DetectorConfig::validate() const {
    if (encoder.empty()) throw ConfigError("encoder widths must name at least the latent width");
    for (int w : encoder)
        if (w <= 0) throw ConfigError("encoder widths must be positive");
    for (int w : critic)
        if (w <= 0) throw ConfigError("critic widths must be positive");
    if (epochs < 0) throw ConfigError("epochs must be nonnegative");
    if (batch_size < 1 || critic_steps < 1) throw ConfigError("batch size and critic steps must be positive");
    if (weights.alpha < 0 || weights.beta < 0 || weights.lambda < 0) throw ConfigError("loss weights must be nonnegative");
    if (memory.enabled && batch_size > memory.size)
        throw ConfigError("batch size may not exceed the memory bank size");
}

nn::MlpSpec encoder_spec(int n_features, const std::vector<int>& widths) {
    nn::MlpSpec s;
    s.widths.push_back(n_features);
    s.widths.insert(s.widths.end(), widths.begin(), widths.end());
    return s;
}

nn::MlpSpec decoder_spec(int n_features, const std::vector<int>& widths) {
    nn::MlpSpec s;
    s.widths.assign(widths.rbegin(), widths.rend());
    s.widths.push_back(n_features);
    return s;
}

nn::MlpSpec critic_spec(int n_features, const std::vector<int>& widths) {
    nn::MlpSpec s;
    s.widths.push_back(n_features);
    s.widths.insert(s.widths.end(), widths.begin(), widths.end());
    s.widths.push_back(1);
    return s;
}

Detector::Detector(int n_features, DetectorConfig c, std::uint64_t seed) : cfg(std::move(c)) {
    cfg.validate();
    encoder = nn::Mlp(encoder_spec(n_features, cfg.encoder), derive_seed(seed, 11), "encoder");
    decoder = nn::Mlp(decoder_spec(n_features, cfg.encoder), derive_seed(seed, 12), "decoder");
    critic = nn::Mlp(critic_spec(n_features, cfg.critic), derive_seed(seed, 13), "critic");
    memory = MemoryBank(cfg.memory.size, cfg.latent_dim(), cfg.memory.tau, cfg.memory.strict);
}

Var Detector::reconstruct(const Var& x) const {
    Var z = encoder.forward(x);
    if (cfg.memory.enabled) z = memory.read(z);
    return decoder.forward(z);
}

Mat Detector::reconstruct(const Mat& x) const {
    ad::NoGradGuard off;
    return reconstruct(ad::constant(x)).value();
}

nn::ParamList Detector::generator_parameters() const {
    nn::ParamList p = encoder.parameters();
    for (auto& q : decoder.parameters()) p.push_back(q);
    return p;
}

json Detector::to_json() const {
    return json{{"format", nn::kCheckpointFormat},
                {"kind", "detector"},
                {"n_features", n_features()},
                {"config", detector_config_to_json(cfg)},
                {"encoder", nn::params_to_json(encoder.parameters())},
                {"decoder", nn::params_to_json(decoder.parameters())},
                {"critic", nn::params_to_json(critic.parameters())},
                {"memory", memory.to_json()}};
}

Detector Detector::from_json(const json& j) {
    if (j.value("format", "") != nn::kCheckpointFormat || j.value("kind", "") != "detector")
        throw DataError("not a detector checkpoint");
    Detector d(j.at("n_features").get<int>(), detector_config_from_json(j.at("config")), 0);
    nn::params_from_json(j.at("encoder"), d.encoder.parameters());
    nn::params_from_json(j.at("decoder"), d.decoder.parameters());
    nn::params_from_json(j.at("critic"), d.critic.parameters());
    d.memory = MemoryBank::from_json(j.at("memory"));
    return d;
}

namespace {

Mat gather_rows(const Mat& x, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
    Mat out(static_cast<Eigen::Index>(end - begin), x.cols());
    for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = x.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

void check_finite(double v, int epoch, const char* term, double other, const char* other_name) {
    if (std::isfinite(v)) return;
    std::ostringstream msg;
    msg << "phase I training diverged at epoch " << epoch << ": " << term << " = " << v << ", " << other_name << " = " << other;
    throw NumericError(msg.str());
}

}  // namespace

Detector train_phase1(const Mat& reference, const DetectorConfig& cfg, std::uint64_t seed, TrainLog* log) {
    if (reference.rows() < 2) throw DataError("phase I needs at least two reference instances");
    Detector model(static_cast<int>(reference.cols()), cfg, seed);
    Rng rng(derive_seed(seed, 14));
    nn::Adam gen_opt(model.generator_parameters(), cfg.adam);
    nn::Adam critic_opt(model.critic.parameters(), cfg.adam);
    const auto n = static_cast<std::size_t>(reference.rows());
    const std::size_t batch = std::min<std::size_t>(n, static_cast<std::size_t>(cfg.batch_size));
    auto critic_fn = [&model](const Var& x) { return model.critic.forward(x); };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<std::size_t> order = rng.permutation(n);
        double gsum = 0, csum = 0;
        int batches = 0;
        for (std::size_t b = 0; b < n; b += batch) {
            const Mat xb = gather_rows(reference, order, b, std::min(n, b + batch));
            const Var x = ad::constant(xb);

            double closs = 0;
            for (int s = 0; s < cfg.critic_steps; ++s) {
                const Mat fake = model.reconstruct(xb);
                Var penalty = nn::gradient_penalty(critic_fn, xb, fake, rng);
                Var loss = critic_loss(model.critic.forward(x), model.critic.forward(ad::constant(fake)), penalty,
                                       cfg.weights.lambda);
                closs = loss.scalar();
                check_finite(closs, epoch, "critic loss", penalty.scalar(), "gradient penalty");
                critic_opt.minimize(loss);
            }

            Var z = model.encoder.forward(x);
            Var zt = cfg.memory.enabled ? model.memory.read(z) : z;
            Var xhat = model.decoder.forward(zt);
            Var loss = generator_loss(x, xhat, model.critic.forward(xhat), cfg.weights);
            check_finite(loss.scalar(), epoch, "generator loss", closs, "critic loss");
            if (cfg.memory.enabled)
                model.memory.enqueue(cfg.memory.enqueue == EnqueueMode::embedding ? z.value() : zt.value());
            gen_opt.minimize(loss);

            gsum += loss.scalar();
            csum += closs;
            ++batches;
        }
        if (log) {
            log->generator_loss.push_back(gsum / batches);
            log->critic_loss.push_back(csum / batches);
        }
    }
    return model;
}

Mat reconstruction_deviation(const Detector& model, const Mat& x) {
    if (x.cols() != model.n_features()) throw DataError("feature count does not match the trained detector");
    return x - model.reconstruct(x);
}

json detector_config_to_json(const DetectorConfig& c) {
    return json{{"encoder", c.encoder},
                {"critic", c.critic},
                {"memory",
                 {{"enabled", c.memory.enabled},
                  {"size", c.memory.size},
                  {"tau", c.memory.tau},
                  {"enqueue", c.memory.enqueue == EnqueueMode::embedding ? "embedding" : "reconstruction"},
                  {"strict", c.memory.strict}}},
                {"alpha", c.weights.alpha},
                {"beta", c.weights.beta},
                {"lambda", c.weights.lambda},
                {"learning_rate", c.adam.learning_rate},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"critic_steps", c.critic_steps}};
}

DetectorConfig detector_config_from_json(const json& j) {
    DetectorConfig c;
    c.encoder = j.at("encoder").get<std::vector<int>>();
    c.critic = j.at("critic").get<std::vector<int>>();
    const auto& m = j.at("memory");
    c.memory.enabled = m.at("enabled").get<bool>();
    c.memory.size = m.at("size").get<int>();
    c.memory.tau = m.at("tau").get<double>();
    c.memory.enqueue = m.at("enqueue").get<std::string>() == "embedding" ? EnqueueMode::embedding : EnqueueMode::reconstruction;
    c.memory.strict = m.at("strict").get<bool>();
    c.weights.alpha = j.at("alpha").get<double>();
    c.weights.beta = j.at("beta").get<double>();
    c.weights.lambda = j.at("lambda").get<double>();
    c.adam.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.critic_steps = j.at("critic_steps").get<int>();
    return c;
}

}  // namespace facd::detect
