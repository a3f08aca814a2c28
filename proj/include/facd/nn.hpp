#pragma once

#include "facd/autodiff.hpp"
#include "facd/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace facd::nn {

using ad::Mat;
using ad::Var;
using json = nlohmann::json;

enum class Activation { identity, leaky_relu, relu, sigmoid };

Activation parse_activation(std::string_view name);
std::string to_string(Activation a);
Var activate(const Var& x, Activation a, double leaky_slope);

struct MlpSpec {
    std::vector<int> widths;  // input, hidden..., output
    Activation hidden = Activation::leaky_relu;
    Activation output = Activation::identity;
    double leaky_slope = 0.2;

    void validate() const;
};

json spec_to_json(const MlpSpec& spec);
MlpSpec spec_from_json(const json& j);

struct NamedParam {
    std::string name;
    Var var;
};
using ParamList = std::vector<NamedParam>;

class Linear {
public:
    Linear() = default;
    Linear(int in, int out, Rng& rng, std::string name);

    Var forward(const Var& x) const;
    void collect(ParamList& out) const;

    Var weight;  // in x out
    Var bias;    // 1 x out

private:
    std::string name_;
};

class Mlp {
public:
    Mlp() = default;
    Mlp(MlpSpec spec, std::uint64_t seed, std::string name);

    Var forward(const Var& x) const;
    Mat predict(const Mat& x) const;
    ParamList parameters() const;
    const MlpSpec& spec() const { return spec_; }
    int in_dim() const { return spec_.widths.front(); }
    int out_dim() const { return spec_.widths.back(); }

private:
    MlpSpec spec_;
    std::vector<Linear> layers_;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(int dim, std::string name, double eps = 1e-5);

    // Normalizes each row to zero mean and unit variance, then applies the
    // elementwise affine map.
    Var forward(const Var& x) const;
    void collect(ParamList& out) const;

    Var gamma;
    Var beta;

private:
    std::string name_;
    double eps_ = 1e-5;
};

Var layer_norm_plain(const Var& x, double eps);

struct AdamConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
public:
    Adam() = default;
    Adam(ParamList params, AdamConfig cfg);

    // Throws NumericError naming the block if any gradient is non-finite.
    void step(const std::vector<Mat>& grads);
    void minimize(const Var& loss);

    long steps() const { return t_; }
    const ParamList& params() const { return params_; }
    json state_to_json() const;
    void state_from_json(const json& j);

private:
    ParamList params_;
    AdamConfig cfg_;
    std::vector<Mat> m_, v_;
    long t_ = 0;
};

using CriticFn = std::function<Var(const Var&)>;

// E[(||grad D(x~)||_2 - 1)^2] at x~ = eps*fake + (1-eps)*real, eps per row.
Var gradient_penalty(const CriticFn& critic, const Mat& real, const Mat& fake, Rng& rng);
Var gradient_penalty_at(const CriticFn& critic, const Mat& real, const Mat& fake, const Eigen::VectorXd& eps);

json matrix_to_json(const Mat& m);
Mat matrix_from_json(const json& j);
json params_to_json(const ParamList& params);
void params_from_json(const json& j, const ParamList& params);

inline constexpr const char* kCheckpointFormat = "facd-checkpoint/1";

}  // namespace facd::nn
