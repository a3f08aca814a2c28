#include "facd/nn.hpp"

#include "facd/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace facd::nn {

Activation parse_activation(std::string_view name) {
    if (name == "identity") return Activation::identity;
    if (name == "leaky_relu") return Activation::leaky_relu;
    if (name == "relu") return Activation::relu;
    if (name == "sigmoid") return Activation::sigmoid;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
    }
    return "identity";
}

Var activate(const Var& x, Activation a, double leaky_slope) {
    switch (a) {
        case Activation::identity: return x;
        case Activation::leaky_relu: return ad::leaky_relu(x, leaky_slope);
        case Activation::relu: return ad::relu(x);
        case Activation::sigmoid: return ad::sigmoid(x);
    }
    return x;
}

void MlpSpec::validate() const {
    if (widths.size() < 2) throw ConfigError("mlp needs at least an input and an output width");
    for (int w : widths)
        if (w <= 0) throw ConfigError("mlp widths must be positive");
}

json spec_to_json(const MlpSpec& spec) {
    return json{{"widths", spec.widths},
                {"hidden", to_string(spec.hidden)},
                {"output", to_string(spec.output)},
                {"leaky_slope", spec.leaky_slope}};
}

MlpSpec spec_from_json(const json& j) {
    MlpSpec s;
    s.widths = j.at("widths").get<std::vector<int>>();
    s.hidden = parse_activation(j.at("hidden").get<std::string>());
    s.output = parse_activation(j.at("output").get<std::string>());
    s.leaky_slope = j.at("leaky_slope").get<double>();
    s.validate();
    return s;
}

Linear::Linear(int in, int out, Rng& rng, std::string name) : name_(std::move(name)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = ad::parameter(rng.uniform_matrix(in, out, -bound, bound));
    bias = ad::parameter(rng.uniform_matrix(1, out, -bound, bound));
}

Var Linear::forward(const Var& x) const { return ad::add_rowvec(ad::matmul(x, weight), bias); }

void Linear::collect(ParamList& out) const {
    out.push_back({name_ + ".weight", weight});
    out.push_back({name_ + ".bias", bias});
}

Mlp::Mlp(MlpSpec spec, std::uint64_t seed, std::string name) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(seed);
    for (std::size_t i = 0; i + 1 < spec_.widths.size(); ++i)
        layers_.emplace_back(spec_.widths[i], spec_.widths[i + 1], rng, name + "." + std::to_string(i));
}

Var Mlp::forward(const Var& x) const {
    if (x.cols() != in_dim()) throw std::invalid_argument("mlp: input width mismatch");
    Var h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i].forward(h);
        const bool last = i + 1 == layers_.size();
        h = activate(h, last ? spec_.output : spec_.hidden, spec_.leaky_slope);
    }
    return h;
}

Mat Mlp::predict(const Mat& x) const {
    ad::NoGradGuard off;
    return forward(ad::constant(x)).value();
}

ParamList Mlp::parameters() const {
    ParamList out;
    for (const auto& l : layers_) l.collect(out);
    return out;
}

LayerNorm::LayerNorm(int dim, std::string name, double eps)
    : gamma(ad::parameter(Mat::Ones(1, dim))), beta(ad::parameter(Mat::Zero(1, dim))),
      name_(std::move(name)), eps_(eps) {}

Var layer_norm_plain(const Var& x, double eps) {
    const double d = static_cast<double>(x.cols());
    Var mu = ad::scale(ad::row_sum(x), 1.0 / d);
    Var centered = ad::add_colvec(x, ad::neg(mu));
    Var var = ad::scale(ad::row_sum(ad::square(centered)), 1.0 / d);
    return ad::div_colvec(centered, ad::sqrt(ad::add_scalar(var, eps)));
}

Var LayerNorm::forward(const Var& x) const {
    return ad::add_rowvec(ad::mul_rowvec(layer_norm_plain(x, eps_), gamma), beta);
}

void LayerNorm::collect(ParamList& out) const {
    out.push_back({name_ + ".gamma", gamma});
    out.push_back({name_ + ".beta", beta});
}

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.learning_rate > 0)) throw ConfigError("learning rate must be positive");
    for (const auto& p : params_) {
        m_.push_back(Mat::Zero(p.var.rows(), p.var.cols()));
        v_.push_back(Mat::Zero(p.var.rows(), p.var.cols()));
    }
}

void Adam::step(const std::vector<Mat>& grads) {
    if (grads.size() != params_.size()) throw std::invalid_argument("adam: gradient count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].rows() != params_[i].var.rows() || grads[i].cols() != params_[i].var.cols())
            throw std::invalid_argument("adam: gradient shape mismatch for " + params_[i].name);
        if (!grads[i].allFinite()) throw NumericError("non-finite gradient in parameter block " + params_[i].name);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i].cwiseProduct(grads[i]);
        Mat& w = params_[i].var.mutable_value();
        w.array() -= cfg_.learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.epsilon);
    }
}

void Adam::minimize(const Var& loss) {
    if (!std::isfinite(loss.scalar())) throw NumericError("non-finite loss value");
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(p.var);
    step(ad::grad_values(loss, vars));
}

json Adam::state_to_json() const {
    json m = json::array(), v = json::array();
    for (std::size_t i = 0; i < m_.size(); ++i) {
        m.push_back(matrix_to_json(m_[i]));
        v.push_back(matrix_to_json(v_[i]));
    }
    return json{{"t", t_},
                {"learning_rate", cfg_.learning_rate},
                {"beta1", cfg_.beta1},
                {"beta2", cfg_.beta2},
                {"epsilon", cfg_.epsilon},
                {"m", m},
                {"v", v}};
}

void Adam::state_from_json(const json& j) {
    t_ = j.at("t").get<long>();
    const auto& m = j.at("m");
    const auto& v = j.at("v");
    if (m.size() != m_.size() || v.size() != v_.size()) throw DataError("adam state: block count mismatch");
    for (std::size_t i = 0; i < m_.size(); ++i) {
        m_[i] = matrix_from_json(m[i]);
        v_[i] = matrix_from_json(v[i]);
    }
}

Var gradient_penalty_at(const CriticFn& critic, const Mat& real, const Mat& fake, const Eigen::VectorXd& eps) {
    if (real.rows() != fake.rows() || real.cols() != fake.cols())
        throw std::invalid_argument("gradient_penalty: real and fake batches differ in shape");
    if (eps.size() != real.rows()) throw std::invalid_argument("gradient_penalty: eps length mismatch");
    ad::EnableGradGuard on;
    Mat mix = (fake.array().colwise() * eps.array() + real.array().colwise() * (1.0 - eps.array())).matrix();
    Var x = ad::parameter(std::move(mix));
    Var out = ad::sum(critic(x));
    Var g = ad::grad(out, std::span<const Var>(&x, 1), true)[0];
    Var gap = ad::add_scalar(ad::row_norm(g), -1.0);
    return ad::mean(ad::square(gap));
}

Var gradient_penalty(const CriticFn& critic, const Mat& real, const Mat& fake, Rng& rng) {
    Eigen::VectorXd eps(real.rows());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = rng.uniform();
    return gradient_penalty_at(critic, real, fake, eps);
}

json matrix_to_json(const Mat& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Mat matrix_from_json(const json& j) {
    const auto r = j.at("rows").get<Eigen::Index>();
    const auto c = j.at("cols").get<Eigen::Index>();
    const auto& d = j.at("data");
    if (static_cast<Eigen::Index>(d.size()) != r * c) throw DataError("matrix payload size mismatch");
    Mat m(r, c);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index jj = 0; jj < c; ++jj) m(i, jj) = d[k++].get<double>();
    return m;
}

json params_to_json(const ParamList& params) {
    json out = json::object();
    for (const auto& p : params) out[p.name] = matrix_to_json(p.var.value());
    return out;
}

void params_from_json(const json& j, const ParamList& params) {
    for (const auto& p : params) {
        if (!j.contains(p.name)) throw DataError("checkpoint is missing parameter block " + p.name);
        Mat m = matrix_from_json(j.at(p.name));
        if (m.rows() != p.var.rows() || m.cols() != p.var.cols())
            throw DataError("checkpoint block " + p.name + " has the wrong shape");
        p.var.mutable_value() = std::move(m);
    }
}

}  // namespace facd::nn
