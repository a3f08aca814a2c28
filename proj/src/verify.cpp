#include "facd/verify.hpp"

#include "facd/annotator.hpp"
#include "facd/detector.hpp"
#include "facd/errors.hpp"
#include "facd/rng.hpp"

#include <algorithm>
#include <cmath>

namespace facd::verify {

json CheckResult::to_json() const {
    return json{{"name", name}, {"passed", passed}, {"residual", residual}, {"tolerance", tolerance}, {"detail", detail}};
}

GammaFn default_gamma() { return &score::gamma_c; }

GammaFn corrupted_gamma() {
    return [](double pi, double pj, double m, double n, score::GammaVariant v) {
        const auto flipped = v == score::GammaVariant::sign_consistent ? score::GammaVariant::as_printed : score::GammaVariant::sign_consistent;
        return score::gamma_c(pi, pj, m, n, flipped);
    };
}

double gradient_check(const std::function<Var(std::span<const Var>)>& f, std::span<const Var> inputs, double h) {
    const Var out = f(inputs);
    const std::vector<Mat> analytic = ad::grad_values(out, inputs);
    double diff2 = 0, a2 = 0, n2 = 0;
    ad::NoGradGuard off;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Mat& w = inputs[k].mutable_value();
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const double keep = w.data()[i];
            w.data()[i] = keep + h;
            const double up = f(inputs).scalar();
            w.data()[i] = keep - h;
            const double down = f(inputs).scalar();
            w.data()[i] = keep;
            const double fd = (up - down) / (2 * h);
            const double a = analytic[k].data()[i];
            diff2 += (a - fd) * (a - fd);
            a2 += a * a;
            n2 += fd * fd;
        }
    }
    return std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), 1e-8);
}

namespace {

double relative(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

// Pairwise sum over i != j of gram(i, j) * w(i, j).
template <class W>
double weighted_pairs(const Mat& x, W&& w) {
    double s = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.rows(); ++j)
            if (i != j) s += x.row(i).dot(x.row(j)) * w(i, j);
    return s;
}

struct Sample {
    Mat x;
    std::vector<int> s;  // 1 for the anomaly group
    int m = 0, n = 0;
};

// Inliers first, then anomalies drawn around a different mean so cross terms matter.
Sample draw_sample(Rng& rng, int m, int n, int dim) {
    Sample out;
    out.m = m;
    out.n = n;
    out.x = rng.normal_matrix(m + n, dim);
    const Eigen::RowVectorXd mu_a = rng.normal_matrix(1, dim) * 2.0;
    const Eigen::RowVectorXd mu_b = rng.normal_matrix(1, dim) * 2.0;
    for (int i = 0; i < m + n; ++i) {
        out.x.row(i) += i < m ? mu_a : mu_b;
        out.s.push_back(i < m ? 0 : 1);
    }
    return out;
}

}  // namespace

CheckResult check_pair_weight_sum(std::uint64_t seed, int instances) {
    CheckResult r{"pair_weight_sum_equivalence", false, 0, 1e-9, json::object()};
    Rng rng(derive_seed(seed, 61));
    for (int t = 0; t < instances; ++t) {
        const int m = 3 + static_cast<int>(rng.index(8));
        const int n = 3 + static_cast<int>(rng.index(8));
        const int dim = 1 + static_cast<int>(rng.index(8));
        Sample smp = draw_sample(rng, m, n, dim);
        const double pairs = weighted_pairs(smp.x, [&](Eigen::Index i, Eigen::Index j) {
            return score::discrete_gamma(smp.s[static_cast<std::size_t>(i)], smp.s[static_cast<std::size_t>(j)], m, n);
        });
        const double mmd = score::linear_mmd2_unbiased(smp.x.topRows(m), smp.x.bottomRows(n));
        r.residual = std::max(r.residual, relative(pairs, mmd));
    }
    r.detail["instances"] = instances;
    r.passed = r.residual <= r.tolerance;
    return r;
}

CheckResult check_gamma_limits(const GammaFn& gamma, double m, double n) {
    CheckResult r{"gamma_endpoint_limits", true, 0, 0, json::object()};
    const double scale = score::discrete_gamma(0, 0, m, n) + score::discrete_gamma(1, 1, m, n) - score::discrete_gamma(0, 1, m, n);
    json rows = json::array();
    double worst_ratio = 0;
    for (double h : {1e-3, 1e-5}) {
        const double tol = 10 * h * scale;
        for (auto v : {score::GammaVariant::sign_consistent, score::GammaVariant::as_printed}) {
            struct Corner {
                const char* name;
                double pi, pj;
                int si, sj;
            };
            for (const Corner& c : {Corner{"inlier_pair", h, h, 0, 0}, Corner{"anomaly_pair", 1 - h, 1 - h, 1, 1},
                                    Corner{"mixed_pair", h, 1 - h, 0, 1}}) {
                const double value = gamma(c.pi, c.pj, m, n, v);
                const double expect = score::discrete_gamma(c.si, c.sj, m, n);
                const double err = std::abs(value - expect);
                const bool mixed_printed = c.si != c.sj && v == score::GammaVariant::as_printed;
                // The printed form is only recorded at the mixed corner.
                const bool ok = mixed_printed || err <= tol;
                if (!mixed_printed) worst_ratio = std::max(worst_ratio, err / tol);
                r.passed = r.passed && ok;
                rows.push_back(json{{"h", h},
                                    {"variant", score::to_string(v)},
                                    {"corner", c.name},
                                    {"value", value},
                                    {"discrete", expect},
                                    {"abs_error", err},
                                    {"tolerance", tol},
                                    {"checked", !mixed_printed},
                                    {"sign", value > 0 ? 1 : value < 0 ? -1 : 0}});
            }
        }
    }
    r.residual = worst_ratio;
    r.tolerance = 1.0;
    r.detail = json{{"m", m}, {"n", n}, {"limits", rows}, {"residual_meaning", "largest error over its O(h) tolerance"}};
    return r;
}

CheckResult check_relaxed_equivalence(const GammaFn& gamma, std::uint64_t seed, int trials) {
    const double eta = 1e-6;
    CheckResult r{"gamma_relaxation_equivalence", false, 0, 1e-3, json::object()};
    Rng rng(derive_seed(seed, 62));
    for (int t = 0; t < trials; ++t) {
        const int m = 3 + static_cast<int>(rng.index(8));
        const int n = 3 + static_cast<int>(rng.index(8));
        const int dim = 1 + static_cast<int>(rng.index(8));
        Sample smp = draw_sample(rng, m, n, dim);
        Eigen::VectorXd p(m + n);
        for (int i = 0; i < m + n; ++i) p(i) = smp.s[static_cast<std::size_t>(i)] ? 1 - eta : eta;
        const double nt = p.sum(), mt = (m + n) - nt;
        const double loss = -weighted_pairs(smp.x, [&](Eigen::Index i, Eigen::Index j) {
            return gamma(p(i), p(j), mt, nt, score::GammaVariant::sign_consistent);
        });
        const double mmd = score::linear_mmd2_unbiased(smp.x.topRows(m), smp.x.bottomRows(n));
        // Hardened scores match the discrete weights up to O(eta); judged against the pair magnitude.
        const double mag = weighted_pairs(smp.x.cwiseAbs(), [&](Eigen::Index i, Eigen::Index j) {
            return std::abs(score::discrete_gamma(smp.s[static_cast<std::size_t>(i)], smp.s[static_cast<std::size_t>(j)], m, n));
        });
        r.residual = std::max(r.residual, std::abs(loss + mmd) / std::max(mag, 1e-300));
    }
    r.detail = json{{"eta", eta}, {"trials", trials}, {"residual_meaning", "|loss + MMD^2| over sum |k gamma|"}};
    r.passed = r.residual <= r.tolerance;
    return r;
}

CheckResult check_scorer_bruteforce(const GammaFn& gamma, std::uint64_t seed, int trials) {
    CheckResult r{"scorer_loss_bruteforce", false, 0, 1e-9, json::object()};
    Rng rng(derive_seed(seed, 63));
    json variants = json::array();
    for (int t = 0; t < trials; ++t) {
        const int big_n = 4 + static_cast<int>(rng.index(61));
        const int dim = 1 + static_cast<int>(rng.index(8));
        const Mat x = rng.normal_matrix(big_n, dim) + Mat::Constant(big_n, dim, 0.5);
        Eigen::VectorXd p(big_n);
        for (int i = 0; i < big_n; ++i) p(i) = rng.uniform(0.05, 0.95);
        const double nt = p.sum(), mt = big_n - nt;
        if (mt <= 1 || nt <= 1) continue;
        for (auto v : {score::GammaVariant::sign_consistent, score::GammaVariant::as_printed}) {
            const double fast = score::scorer_loss(x, p, v);
            const double naive = -weighted_pairs(x, [&](Eigen::Index i, Eigen::Index j) { return gamma(p(i), p(j), mt, nt, v); });
            r.residual = std::max(r.residual, relative(fast, naive));
        }
    }
    r.detail = json{{"trials", trials}, {"max_n", 64}};
    r.passed = r.residual <= r.tolerance;
    return r;
}

std::vector<CheckResult> check_gradients(std::uint64_t seed) {
    const double tol = 1e-4;
    std::vector<CheckResult> out;
    auto record = [&](const std::string& name, double err) {
        out.push_back(CheckResult{"gradient_" + name, err <= tol, err, tol, json::object()});
    };
    Rng rng(derive_seed(seed, 64));

    {
        nn::Mlp mlp(nn::MlpSpec{{5, 7, 6, 3}}, derive_seed(seed, 65), "mlp");
        std::vector<Var> in{ad::parameter(rng.normal_matrix(4, 5))};
        for (auto& p : mlp.parameters()) in.push_back(p.var);
        const Mat w = rng.normal_matrix(4, 3);
        record("mlp", gradient_check([&](std::span<const Var>) { return ad::sum(ad::mul(mlp.forward(in[0]), ad::constant(w))); }, in));
    }
    {
        std::vector<Var> in{ad::parameter(rng.normal_matrix(3, 4)), ad::parameter(rng.normal_matrix(6, 4))};
        const Mat w = rng.normal_matrix(3, 4);
        record("memory_attention", gradient_check([&](std::span<const Var> v) {
                   return ad::sum(ad::mul(detect::memory_attention(v[0], v[1], 0.7), ad::constant(w)));
               }, in));
    }
    {
        nn::Mlp critic(nn::MlpSpec{{3, 5, 1}}, derive_seed(seed, 66), "critic");
        const Mat real = rng.normal_matrix(4, 3), fake = rng.normal_matrix(4, 3);
        Eigen::VectorXd eps(4);
        for (int i = 0; i < 4; ++i) eps(i) = rng.uniform();
        std::vector<Var> in;
        for (auto& p : critic.parameters()) in.push_back(p.var);
        record("gradient_penalty", gradient_check([&](std::span<const Var>) {
                   return nn::gradient_penalty_at([&](const Var& x) { return critic.forward(x); }, real, fake, eps);
               }, in));
    }
    {
        nn::LayerNorm ln(5, "ln");
        ln.gamma.mutable_value() = rng.normal_matrix(1, 5);
        ln.beta.mutable_value() = rng.normal_matrix(1, 5);
        std::vector<Var> in{ad::parameter(rng.normal_matrix(3, 5)), ln.gamma, ln.beta};
        const Mat w = rng.normal_matrix(3, 5);
        record("layer_norm", gradient_check([&](std::span<const Var> v) { return ad::sum(ad::mul(ln.forward(v[0]), ad::constant(w))); }, in));
    }
    {
        annot::FusionBlock block(4, 6, 2, derive_seed(seed, 67));
        std::vector<Var> in{ad::parameter(rng.normal_matrix(5, 4)), ad::parameter(rng.normal_matrix(5, 4))};
        for (auto& p : block.parameters()) in.push_back(p.var);
        const Mat w = rng.normal_matrix(5, 6);
        record("fusion_block", gradient_check([&](std::span<const Var> v) {
                   return ad::sum(ad::mul(block.forward(v[0], v[1]), ad::constant(w)));
               }, in));
    }
    {
        std::vector<Var> in{ad::parameter(rng.normal_matrix(6, 3)), ad::parameter(rng.normal_matrix(3, 3))};
        const Mat p = annot::target_distribution(annot::soft_assign(in[0].value(), in[1].value(), 1.0));
        record("clustering_loss", gradient_check([&](std::span<const Var> v) {
                   return annot::clustering_loss(p, annot::soft_assign(v[0], v[1], 1.0));
               }, in));
    }
    {
        const Mat x = rng.normal_matrix(8, 3) + Mat::Constant(8, 3, 0.3);
        Mat gram = x * x.transpose();
        gram.diagonal().setZero();
        for (auto v : {score::GammaVariant::sign_consistent, score::GammaVariant::as_printed}) {
            std::vector<Var> in{ad::parameter(rng.uniform_matrix(8, 1, 0.1, 0.9))};
            record("gamma_path_" + score::to_string(v), gradient_check([&](std::span<const Var> s) {
                       return score::scorer_loss_var(gram, s[0], 5.0, 3.0, v);
                   }, in));
        }
        nn::Mlp f(nn::MlpSpec{{3, 6, 1}}, derive_seed(seed, 68), "scorer");
        std::vector<Var> in;
        for (auto& p : f.parameters()) in.push_back(p.var);
        record("scorer_network", gradient_check([&](std::span<const Var>) {
                   const Var p = ad::clamp(ad::sigmoid(f.forward(ad::constant(x))), 1e-4, 1 - 1e-4);
                   return score::scorer_loss_var(gram, p, 5.0, 3.0, score::GammaVariant::sign_consistent);
               }, in));
    }
    return out;
}

CheckResult check_trend(const score::TrendSpec& spec) {
    CheckResult r{"shift_deviation_trend", true, 0, 0, json::object()};
    const auto rows = score::shift_deviation_trend(spec);
    json table = json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        table.push_back(json{{"n", rows[i].n},
                             {"m", rows[i].m},
                             {"rate", rows[i].rate},
                             {"ci_low", rows[i].lo},
                             {"ci_high", rows[i].hi},
                             {"mean_statistic", rows[i].mean_statistic}});
        if (i > 0) {
            const double rise = rows[i].rate - rows[i - 1].rate;
            r.residual = std::max(r.residual, rise);
            r.passed = r.passed && rise <= 0;
        }
    }
    r.detail = json{{"epsilon", spec.epsilon}, {"trials", spec.trials}, {"ratio", spec.ratio}, {"rows", table},
                    {"residual_meaning", "largest increase of the rate along the grid"}};
    return r;
}

CheckResult check_eigengap_blocks() {
    CheckResult r{"eigengap_blocks", true, 0, 0, json::object()};
    json rows = json::array();
    for (int k : {2, 3, 5}) {
        const int per = 6;
        Mat z = Mat::Zero(k * per, k + 2);
        for (int b = 0; b < k; ++b)
            for (int i = 0; i < per; ++i) z(b * per + i, b) = 1.0 + 0.1 * i;
        const auto gap = annot::infer_cluster_count(z, annot::EigengapConvention::spectral_gap);
        const auto lit = annot::infer_cluster_count(z, annot::EigengapConvention::literal_index);
        r.passed = r.passed && gap.k == k;
        r.residual = std::max(r.residual, static_cast<double>(std::abs(gap.k - k)));
        rows.push_back(json{{"true_k", k}, {"spectral_gap_k", gap.k}, {"literal_index_k", lit.k}});
    }
    r.detail = json{{"cases", rows}};
    return r;
}

CheckResult check_eigengap_gaussian(std::uint64_t seed, int seeds) {
    CheckResult r{"eigengap_gaussian", false, 0, 0, json::object()};
    int hits = 0;
    json found = json::array();
    for (int s = 0; s < seeds; ++s) {
        Rng rng(derive_seed(seed, 200 + static_cast<std::uint64_t>(s)));
        const int dim = 16, per = 50;
        Mat z(2 * per, dim);
        for (int c = 0; c < 2; ++c) {
            Eigen::RowVectorXd centre = rng.normal_matrix(1, dim);
            centre *= 10.0 / centre.norm();
            z.middleRows(c * per, per) = rng.normal_matrix(per, dim).rowwise() + centre;
        }
        const int k = annot::infer_cluster_count(z).k;
        hits += k == 2;
        found.push_back(k);
    }
    r.passed = hits * 5 >= seeds * 4;
    r.residual = seeds - hits;
    r.detail = json{{"recovered", hits}, {"seeds", seeds}, {"estimates", found}};
    return r;
}

CheckResult check_attention_rows(std::uint64_t seed) {
    CheckResult r{"attention_rows", false, 0, 1e-9, json::object()};
    Rng rng(derive_seed(seed, 69));
    annot::FusionBlock block(4, 8, 2, derive_seed(seed, 70));
    std::vector<Mat> att;
    {
        ad::NoGradGuard off;
        block.forward(ad::constant(rng.normal_matrix(7, 4)), ad::constant(rng.normal_matrix(7, 4)), &att);
    }
    for (const auto& a : att) r.residual = std::max(r.residual, (a.rowwise().sum().array() - 1.0).abs().maxCoeff());
    detect::MemoryBank bank(5, 3, 1.0);
    bank.enqueue(rng.normal_matrix(5, 3));
    const Mat w = bank.attention_weights(rng.normal_matrix(9, 3));
    r.residual = std::max(r.residual, (w.rowwise().sum().array() - 1.0).abs().maxCoeff());
    r.passed = r.residual <= r.tolerance && (w.array() >= 0).all();
    return r;
}

json run_verify(const VerifyOptions& opt) {
    const GammaFn gamma = opt.inject_gamma_fault ? corrupted_gamma() : default_gamma();
    std::vector<CheckResult> checks;
    checks.push_back(check_pair_weight_sum(opt.seed));
    checks.push_back(check_gamma_limits(gamma));
    checks.push_back(check_relaxed_equivalence(gamma, opt.seed));
    checks.push_back(check_scorer_bruteforce(gamma, opt.seed));
    for (auto& g : check_gradients(opt.seed)) checks.push_back(std::move(g));
    score::TrendSpec trend;
    trend.seed = opt.seed;
    trend.trials = opt.trend_trials;
    checks.push_back(check_trend(trend));
    checks.push_back(check_eigengap_blocks());
    checks.push_back(check_eigengap_gaussian(opt.seed));
    checks.push_back(check_attention_rows(opt.seed));
    bool all = true;
    json arr = json::array();
    for (const auto& c : checks) {
        all = all && c.passed;
        arr.push_back(c.to_json());
    }
    return json{{"passed", all}, {"fault_injected", opt.inject_gamma_fault}, {"seed", opt.seed}, {"checks", arr}};
}

}  // namespace facd::verify
