#pragma once
// Test-side reference computations, kept apart from the library code paths.

#include "facd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace oracle {

using facd::ad::Mat;
using facd::ad::Var;

// Central finite differences of a scalar function of several matrices.
inline std::vector<Mat> numeric_grad(const std::function<double(const std::vector<Mat>&)>& f, std::vector<Mat> at, double h = 1e-6) {
    std::vector<Mat> out;
    for (std::size_t k = 0; k < at.size(); ++k) {
        Mat g(at[k].rows(), at[k].cols());
        for (Eigen::Index i = 0; i < at[k].size(); ++i) {
            const double keep = at[k].data()[i];
            at[k].data()[i] = keep + h;
            const double up = f(at);
            at[k].data()[i] = keep - h;
            const double down = f(at);
            at[k].data()[i] = keep;
            g.data()[i] = (up - down) / (2 * h);
        }
        out.push_back(g);
    }
    return out;
}

// Relative error between analytic gradients of a Var-valued function and finite differences.
inline double grad_error(const std::function<Var(const std::vector<Var>&)>& f, const std::vector<Mat>& at) {
    std::vector<Var> in;
    for (const auto& m : at) in.push_back(facd::ad::parameter(m));
    const auto analytic = facd::ad::grad_values(f(in), in);
    const auto numeric = numeric_grad(
        [&](const std::vector<Mat>& ms) {
            std::vector<Var> c;
            for (const auto& m : ms) c.push_back(facd::ad::constant(m));
            return f(c).scalar();
        },
        at);
    double d = 0, a = 0, n = 0;
    for (std::size_t k = 0; k < at.size(); ++k) {
        d += (analytic[k] - numeric[k]).squaredNorm();
        a += analytic[k].squaredNorm();
        n += numeric[k].squaredNorm();
    }
    return std::sqrt(d) / std::max(std::sqrt(a) + std::sqrt(n), 1e-8);
}

// Unbiased linear MMD^2 written as three explicit loops.
inline double mmd2_loops(const Mat& a, const Mat& b) {
    const double m = static_cast<double>(a.rows()), n = static_cast<double>(b.rows());
    double aa = 0, bb = 0, ab = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.rows(); ++j)
            if (i != j) aa += a.row(i).dot(a.row(j));
    for (Eigen::Index i = 0; i < b.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j)
            if (i != j) bb += b.row(i).dot(b.row(j));
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j) ab += a.row(i).dot(b.row(j));
    return aa / (m * (m - 1)) + bb / (n * (n - 1)) - 2 * ab / (m * n);
}

// Relaxed pairwise weight typed out term by term from the printed formula:
// sin(pi a) sin(pi b) / pi^2 times the four population fractions.
inline double gamma_printed(double a, double b, double m, double n) {
    const double pi = 3.14159265358979323846;
    const double s = std::sin(pi * a) * std::sin(pi * b) / (pi * pi);
    return s * (1 / (a * b * m * (m - 1)) + 1 / ((1 - a) * (1 - b) * n * (n - 1)) + 1 / (a * (1 - b) * m * n) +
                1 / ((1 - a) * b * m * n));
}

}  // namespace oracle
