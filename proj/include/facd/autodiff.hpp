#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

// Reverse-mode differentiation over dense double matrices.
// Backward rules are written with the same Var operations, so a gradient
// can itself be differentiated (needed for the critic gradient penalty).
namespace facd::ad {

using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Node;

class Var {
public:
    Var() = default;
    explicit Var(Mat value, bool requires_grad = false);

    const Mat& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    double scalar() const;
    bool requires_grad() const;
    bool defined() const { return static_cast<bool>(node_); }
    Node* node() const { return node_.get(); }

    // Only meaningful for leaves: overwrite the stored value in place.
    Mat& mutable_value() const;

    static Var from_node(std::shared_ptr<Node> n);

private:
    std::shared_ptr<Node> node_;
};

struct Node {
    Mat value;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<std::vector<Var>(const Var&)> backward;
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

class EnableGradGuard {
public:
    EnableGradGuard();
    ~EnableGradGuard();
    EnableGradGuard(const EnableGradGuard&) = delete;
    EnableGradGuard& operator=(const EnableGradGuard&) = delete;

private:
    bool previous_;
};

Var constant(Mat value);
Var parameter(Mat value);
Var scalar(double v);
Var detach(const Var& a);

// d(output)/d(inputs). `output` must be 1x1. With create_graph the returned
// gradients are themselves differentiable.
std::vector<Var> grad(const Var& output, std::span<const Var> inputs, bool create_graph = false);
std::vector<Mat> grad_values(const Var& output, std::span<const Var> inputs);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);

Var add_rowvec(const Var& a, const Var& row);
Var add_colvec(const Var& a, const Var& col);
Var mul_rowvec(const Var& a, const Var& row);
Var mul_colvec(const Var& a, const Var& col);
Var div_colvec(const Var& a, const Var& col);

Var sum(const Var& a);
Var mean(const Var& a);
Var row_sum(const Var& a);
Var col_sum(const Var& a);
Var fill(const Var& s, Index rows, Index cols);
Var tile_rows(const Var& row, Index n);
Var tile_cols(const Var& col, Index n);

Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var pow_scalar(const Var& a, double e);
Var reciprocal(const Var& a);
// 1/a where a != 0, and 0 (with zero derivative) where a == 0.
Var safe_reciprocal(const Var& a);
Var sigmoid(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var relu(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var clamp_min(const Var& a, double lo);

Var softmax_rows(const Var& a);
Var row_norm(const Var& a);
Var slice_cols(const Var& a, Index start, Index n);
Var embed_cols(const Var& a, Index start, Index total);
Var concat_cols(std::span<const Var> parts);

}  // namespace facd::ad
