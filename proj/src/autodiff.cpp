#include "facd/autodiff.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace facd::ad {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool ok, const char* op, const char* what) {
    if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

void same_shape(const Var& a, const Var& b, const char* op) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), op, "shape mismatch");
}

using Backward = std::function<std::vector<Var>(const Var&)>;

Var make(Mat value, std::vector<Var> parents, Backward bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward = std::move(bw);
    }
    return Var::from_node(std::move(n));
}

}  // namespace

Var::Var(Mat value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

const Mat& Var::value() const {
    if (!node_) throw std::logic_error("Var: undefined");
    return node_->value;
}

Mat& Var::mutable_value() const {
    if (!node_) throw std::logic_error("Var: undefined");
    return node_->value;
}

double Var::scalar() const {
    const Mat& v = value();
    if (v.rows() != 1 || v.cols() != 1) throw std::logic_error("Var::scalar on non 1x1 value");
    return v(0, 0);
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

Var Var::from_node(std::shared_ptr<Node> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
EnableGradGuard::EnableGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = previous_; }

Var constant(Mat value) { return Var(std::move(value), false); }
Var parameter(Mat value) { return Var(std::move(value), true); }
Var scalar(double v) { return Var(Mat::Constant(1, 1, v), false); }
Var detach(const Var& a) { return Var(a.value(), false); }

std::vector<Var> grad(const Var& output, std::span<const Var> inputs, bool create_graph) {
    require(output.rows() == 1 && output.cols() == 1, "grad", "output must be 1x1");

    // Iterative post-order DFS over the differentiable subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    if (output.requires_grad()) {
        std::vector<std::pair<Var, std::size_t>> stack;
        stack.emplace_back(output, 0);
        seen.insert(output.node());
        while (!stack.empty()) {
            auto& [v, next] = stack.back();
            Node* n = v.node();
            if (next < n->parents.size()) {
                const Var& p = n->parents[next++];
                if (p.requires_grad() && !seen.count(p.node())) {
                    seen.insert(p.node());
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::unordered_map<Node*, Var> grads;
    {
        std::optional<NoGradGuard> off;
        std::optional<EnableGradGuard> on;
        if (create_graph) on.emplace(); else off.emplace();

        if (output.requires_grad()) grads.emplace(output.node(), constant(Mat::Ones(1, 1)));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            auto g = grads.find(n);
            if (g == grads.end() || !n->backward) continue;
            std::vector<Var> pg = n->backward(g->second);
            for (std::size_t i = 0; i < n->parents.size(); ++i) {
                const Var& p = n->parents[i];
                if (!p.requires_grad() || !pg[i].defined()) continue;
                auto slot = grads.find(p.node());
                if (slot == grads.end()) grads.emplace(p.node(), pg[i]);
                else slot->second = add(slot->second, pg[i]);
            }
        }
    }

    std::vector<Var> out;
    out.reserve(inputs.size());
    for (const auto& x : inputs) {
        auto g = grads.find(x.node());
        if (g == grads.end()) out.push_back(constant(Mat::Zero(x.rows(), x.cols())));
        else out.push_back(g->second);
    }
    return out;
}

std::vector<Mat> grad_values(const Var& output, std::span<const Var> inputs) {
    std::vector<Var> g = grad(output, inputs, false);
    std::vector<Mat> out;
    out.reserve(g.size());
    for (auto& v : g) out.push_back(v.value());
    return out;
}

Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "matmul", "inner dimensions differ");
    Mat v = a.value() * b.value();
    return make(std::move(v), {a, b}, [a, b](const Var& g) {
        return std::vector<Var>{matmul(g, transpose(b)), matmul(transpose(a), g)};
    });
}

Var transpose(const Var& a) {
    Mat v = a.value().transpose();
    return make(std::move(v), {a}, [](const Var& g) { return std::vector<Var>{transpose(g)}; });
}

Var add(const Var& a, const Var& b) {
    same_shape(a, b, "add");
    return make(a.value() + b.value(), {a, b}, [](const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
    same_shape(a, b, "sub");
    return make(a.value() - b.value(), {a, b}, [](const Var& g) { return std::vector<Var>{g, neg(g)}; });
}

Var mul(const Var& a, const Var& b) {
    same_shape(a, b, "mul");
    return make(a.value().cwiseProduct(b.value()), {a, b}, [a, b](const Var& g) {
        return std::vector<Var>{mul(g, b), mul(g, a)};
    });
}

Var div(const Var& a, const Var& b) {
    same_shape(a, b, "div");
    return make(a.value().cwiseQuotient(b.value()), {a, b}, [a, b](const Var& g) {
        return std::vector<Var>{div(g, b), neg(div(mul(g, a), mul(b, b)))};
    });
}

Var neg(const Var& a) {
    return make(-a.value(), {a}, [](const Var& g) { return std::vector<Var>{neg(g)}; });
}

Var scale(const Var& a, double c) {
    return make(a.value() * c, {a}, [c](const Var& g) { return std::vector<Var>{scale(g, c)}; });
}

Var add_scalar(const Var& a, double c) {
    return make((a.value().array() + c).matrix(), {a}, [](const Var& g) { return std::vector<Var>{g}; });
}

Var add_rowvec(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "add_rowvec", "row shape");
    Mat v = a.value().rowwise() + row.value().row(0);
    return make(std::move(v), {a, row}, [](const Var& g) { return std::vector<Var>{g, col_sum(g)}; });
}

Var add_colvec(const Var& a, const Var& col) {
    require(col.cols() == 1 && col.rows() == a.rows(), "add_colvec", "column shape");
    Mat v = a.value().colwise() + col.value().col(0);
    return make(std::move(v), {a, col}, [](const Var& g) { return std::vector<Var>{g, row_sum(g)}; });
}

Var mul_rowvec(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "mul_rowvec", "row shape");
    Mat v = (a.value().array().rowwise() * row.value().row(0).array()).matrix();
    return make(std::move(v), {a, row}, [a, row](const Var& g) {
        return std::vector<Var>{mul_rowvec(g, row), col_sum(mul(g, a))};
    });
}

Var mul_colvec(const Var& a, const Var& col) {
    require(col.cols() == 1 && col.rows() == a.rows(), "mul_colvec", "column shape");
    Mat v = (a.value().array().colwise() * col.value().col(0).array()).matrix();
    return make(std::move(v), {a, col}, [a, col](const Var& g) {
        return std::vector<Var>{mul_colvec(g, col), row_sum(mul(g, a))};
    });
}

Var div_colvec(const Var& a, const Var& col) { return mul_colvec(a, reciprocal(col)); }

Var sum(const Var& a) {
    const Index r = a.rows(), c = a.cols();
    return make(Mat::Constant(1, 1, a.value().sum()), {a}, [r, c](const Var& g) {
        return std::vector<Var>{fill(g, r, c)};
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.rows() * a.cols());
    require(n > 0, "mean", "empty input");
    return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
    const Index c = a.cols();
    Mat v = a.value().rowwise().sum();
    return make(std::move(v), {a}, [c](const Var& g) { return std::vector<Var>{tile_cols(g, c)}; });
}

Var col_sum(const Var& a) {
    const Index r = a.rows();
    Mat v = a.value().colwise().sum();
    return make(std::move(v), {a}, [r](const Var& g) { return std::vector<Var>{tile_rows(g, r)}; });
}

Var fill(const Var& s, Index rows, Index cols) {
    require(s.rows() == 1 && s.cols() == 1, "fill", "source must be 1x1");
    return make(Mat::Constant(rows, cols, s.scalar()), {s}, [](const Var& g) {
        return std::vector<Var>{sum(g)};
    });
}

Var tile_rows(const Var& row, Index n) {
    require(row.rows() == 1, "tile_rows", "source must be a row");
    Mat v = row.value().replicate(n, 1);
    return make(std::move(v), {row}, [](const Var& g) { return std::vector<Var>{col_sum(g)}; });
}

Var tile_cols(const Var& col, Index n) {
    require(col.cols() == 1, "tile_cols", "source must be a column");
    Mat v = col.value().replicate(1, n);
    return make(std::move(v), {col}, [](const Var& g) { return std::vector<Var>{row_sum(g)}; });
}

Var exp(const Var& a) {
    return make(a.value().array().exp().matrix(), {a}, [a](const Var& g) {
        return std::vector<Var>{mul(g, exp(a))};
    });
}

Var log(const Var& a) {
    return make(a.value().array().log().matrix(), {a}, [a](const Var& g) {
        return std::vector<Var>{div(g, a)};
    });
}

Var sqrt(const Var& a) {
    return make(a.value().array().sqrt().matrix(), {a}, [a](const Var& g) {
        return std::vector<Var>{div(g, scale(sqrt(a), 2.0))};
    });
}

Var square(const Var& a) { return mul(a, a); }

Var abs(const Var& a) {
    Mat sign = a.value().unaryExpr([](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
    Var s = constant(std::move(sign));
    return make(a.value().cwiseAbs(), {a}, [s](const Var& g) { return std::vector<Var>{mul(g, s)}; });
}

Var sin(const Var& a) {
    return make(a.value().array().sin().matrix(), {a}, [a](const Var& g) {
        return std::vector<Var>{mul(g, cos(a))};
    });
}

Var cos(const Var& a) {
    return make(a.value().array().cos().matrix(), {a}, [a](const Var& g) {
        return std::vector<Var>{neg(mul(g, sin(a)))};
    });
}

Var pow_scalar(const Var& a, double e) {
    Mat v = a.value().array().pow(e).matrix();
    return make(std::move(v), {a}, [a, e](const Var& g) {
        return std::vector<Var>{mul(g, scale(pow_scalar(a, e - 1.0), e))};
    });
}

Var reciprocal(const Var& a) {
    return make(a.value().cwiseInverse(), {a}, [a](const Var& g) {
        return std::vector<Var>{neg(div(g, mul(a, a)))};
    });
}

Var safe_reciprocal(const Var& a) {
    Mat v = a.value().unaryExpr([](double x) { return x != 0.0 ? 1.0 / x : 0.0; });
    return make(std::move(v), {a}, [a](const Var& g) {
        Var r = safe_reciprocal(a);
        return std::vector<Var>{neg(mul(g, mul(r, r)))};
    });
}

Var sigmoid(const Var& a) {
    Mat v = a.value().unaryExpr([](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
    return make(std::move(v), {a}, [a](const Var& g) {
        Var s = sigmoid(a);
        return std::vector<Var>{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
    });
}

Var leaky_relu(const Var& a, double slope) {
    Mat mask = a.value().unaryExpr([slope](double x) { return x > 0 ? 1.0 : slope; });
    Mat v = a.value().cwiseProduct(mask);
    Var m = constant(std::move(mask));
    return make(std::move(v), {a}, [m](const Var& g) { return std::vector<Var>{mul(g, m)}; });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var clamp(const Var& a, double lo, double hi) {
    Mat mask = a.value().unaryExpr([lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
    Mat v = a.value().cwiseMax(lo).cwiseMin(hi);
    Var m = constant(std::move(mask));
    return make(std::move(v), {a}, [m](const Var& g) { return std::vector<Var>{mul(g, m)}; });
}

Var clamp_min(const Var& a, double lo) {
    Mat mask = a.value().unaryExpr([lo](double x) { return x >= lo ? 1.0 : 0.0; });
    Mat v = a.value().cwiseMax(lo);
    Var m = constant(std::move(mask));
    return make(std::move(v), {a}, [m](const Var& g) { return std::vector<Var>{mul(g, m)}; });
}

Var softmax_rows(const Var& a) {
    Var shift = constant(-a.value().rowwise().maxCoeff());
    Var e = exp(add_colvec(a, shift));
    return div_colvec(e, row_sum(e));
}

Var row_norm(const Var& a) {
    Var sq = row_sum(mul(a, a));
    Mat v = sq.value().cwiseSqrt();
    return make(std::move(v), {a}, [a](const Var& g) {
        Var n = row_norm(a);
        return std::vector<Var>{mul_colvec(a, mul(g, safe_reciprocal(n)))};
    });
}

Var slice_cols(const Var& a, Index start, Index n) {
    require(start >= 0 && n >= 0 && start + n <= a.cols(), "slice_cols", "range out of bounds");
    const Index total = a.cols();
    Mat v = a.value().middleCols(start, n);
    return make(std::move(v), {a}, [start, total](const Var& g) {
        return std::vector<Var>{embed_cols(g, start, total)};
    });
}

Var embed_cols(const Var& a, Index start, Index total) {
    require(start >= 0 && start + a.cols() <= total, "embed_cols", "range out of bounds");
    const Index n = a.cols();
    Mat v = Mat::Zero(a.rows(), total);
    v.middleCols(start, n) = a.value();
    return make(std::move(v), {a}, [start, n](const Var& g) {
        return std::vector<Var>{slice_cols(g, start, n)};
    });
}

Var concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), "concat_cols", "no inputs");
    const Index r = parts[0].rows();
    Index total = 0;
    std::vector<Index> offsets;
    for (const auto& p : parts) {
        require(p.rows() == r, "concat_cols", "row counts differ");
        offsets.push_back(total);
        total += p.cols();
    }
    Mat v(r, total);
    for (std::size_t i = 0; i < parts.size(); ++i) v.middleCols(offsets[i], parts[i].cols()) = parts[i].value();
    std::vector<Var> ps(parts.begin(), parts.end());
    std::vector<Index> widths;
    for (const auto& p : parts) widths.push_back(p.cols());
    return make(std::move(v), ps, [offsets, widths](const Var& g) {
        std::vector<Var> out;
        for (std::size_t i = 0; i < offsets.size(); ++i) out.push_back(slice_cols(g, offsets[i], widths[i]));
        return out;
    });
}

}  // namespace facd::ad
