#include "facd/annotator.hpp"
#include "facd/errors.hpp"
#include "facd/metrics.hpp"
#include "oracle.hpp"

#include <doctest.h>

#include <cmath>

using namespace facd;
using namespace facd::annot;
using ad::Mat;
using ad::Var;

namespace {

Mat random_q(Rng& rng, int n, int k) {
    Mat q = rng.uniform_matrix(n, k, 0.05, 1.0);
    return q.array().colwise() / q.rowwise().sum().array();
}

// Tight, well separated groups in `dim` dimensions with their true labels.
std::pair<Mat, std::vector<int>> blobs(Rng& rng, int k, int per, int dim, double spread, double radius) {
    Mat x(k * per, dim);
    std::vector<int> y;
    for (int c = 0; c < k; ++c) {
        Eigen::RowVectorXd centre = rng.normal_matrix(1, dim);
        centre *= radius / centre.norm();
        for (int i = 0; i < per; ++i) {
            x.row(c * per + i) = centre + rng.normal_matrix(1, dim) * spread;
            y.push_back(c);
        }
    }
    return {x, y};
}

}  // namespace

TEST_CASE("perfect reconstruction gives zero deviation") {
    detect::DetectorConfig c;
    c.encoder = {4};
    c.critic = {4};
    c.memory.enabled = false;
    c.batch_size = 4;
    detect::Detector d(4, c, 1);
    auto enc = d.encoder.parameters(), dec = d.decoder.parameters();
    enc[0].var.mutable_value().setIdentity();
    enc[1].var.mutable_value().setZero();
    dec[0].var.mutable_value().setIdentity();
    dec[1].var.mutable_value().setZero();
    Rng rng(1);
    const Mat xi = rng.uniform_matrix(6, 4, 0.1, 2.0);
    CHECK(post_adaptation_deviation(d, xi).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("deviation equals the direct two-call composition") {
    detect::DetectorConfig c;
    c.encoder = {8, 3};
    c.critic = {4};
    c.memory.size = 5;
    c.batch_size = 4;
    detect::Detector d(6, c, 2);
    Rng rng(2);
    d.memory.enqueue(rng.normal_matrix(5, 3));
    const Mat xi = rng.normal_matrix(7, 6);
    const Mat z = d.encoder.predict(xi);
    Mat zt;
    {
        ad::NoGradGuard off;
        zt = detect::memory_attention(ad::constant(z), ad::constant(d.memory.entries()), c.memory.tau).value();
    }
    CHECK((post_adaptation_deviation(d, xi) - (xi - d.decoder.predict(zt))).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero deviations with bias-free value maps leave the query path") {
    FusionBlock block(5, 8, 2, 3);
    block.wv.bias.mutable_value().setZero();
    block.wpsi.bias.mutable_value().setZero();
    Rng rng(3);
    const Mat xi = rng.normal_matrix(4, 5), zero = Mat::Zero(4, 5);
    const Mat before = block.forward(xi, zero);
    block.wk.weight.mutable_value() = rng.normal_matrix(5, 8);
    block.wv.weight.mutable_value() = rng.normal_matrix(5, 8);
    block.wpsi.weight.mutable_value() = rng.normal_matrix(8, 8);
    CHECK((block.forward(xi, zero) - before).cwiseAbs().maxCoeff() < 1e-12);
    // And the output is the two normalizations applied to the query projection.
    ad::NoGradGuard off;
    const Var z = block.ln1.forward(block.wq.forward(ad::constant(xi)));
    const Mat expect = block.ln2.forward(ad::add(z, block.ffn_out.forward(ad::relu(block.ffn_in.forward(z))))).value();
    CHECK((before - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention rows sum to one, and a single anomaly attends to itself") {
    FusionBlock block(5, 8, 2, 4);
    Rng rng(4);
    std::vector<Mat> att;
    {
        ad::NoGradGuard off;
        block.forward(ad::constant(rng.normal_matrix(6, 5)), ad::constant(rng.normal_matrix(6, 5)), &att);
    }
    REQUIRE(att.size() == 2);
    for (const auto& a : att) CHECK((a.rowwise().sum().array() - 1).abs().maxCoeff() < 1e-12);
    {
        ad::NoGradGuard off;
        block.forward(ad::constant(rng.normal_matrix(1, 5)), ad::constant(rng.normal_matrix(1, 5)), &att);
    }
    for (const auto& a : att) CHECK(a(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("fused rows are normalized before the affine map") {
    FusionBlock block(5, 8, 1, 5);
    Rng rng(5);
    const Mat z = block.forward(rng.normal_matrix(6, 5), rng.normal_matrix(6, 5));
    // Fresh layer norms carry gain 1 and shift 0.
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        CHECK(std::abs(z.row(i).mean()) < 1e-9);
        CHECK((z.row(i).array() - z.row(i).mean()).square().mean() == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("fusion block gradients") {
    FusionBlock block(3, 4, 2, 6);
    Rng rng(6);
    const Mat w = rng.normal_matrix(4, 4);
    std::vector<Mat> at{rng.normal_matrix(4, 3), rng.normal_matrix(4, 3)};
    const double err = oracle::grad_error(
        [&](const std::vector<Var>& v) { return ad::sum(ad::mul(block.forward(v[0], v[1]), ad::constant(w))); }, at);
    CHECK(err < 1e-4);
    // Parameters too.
    const auto params = block.parameters();
    std::vector<Mat> pv;
    for (const auto& p : params) pv.push_back(p.var.value());
    const Mat xi = at[0], de = at[1];
    const double perr = oracle::grad_error(
        [&](const std::vector<Var>& v) {
            FusionBlock b = block;
            // Rebind the copy's parameters to the supplied values.
            b.wq.weight = v[0], b.wq.bias = v[1], b.wk.weight = v[2], b.wk.bias = v[3], b.wv.weight = v[4], b.wv.bias = v[5];
            b.wpsi.weight = v[6], b.wpsi.bias = v[7], b.ffn_in.weight = v[8], b.ffn_in.bias = v[9], b.ffn_out.weight = v[10];
            b.ffn_out.bias = v[11], b.ln1.gamma = v[12], b.ln1.beta = v[13], b.ln2.gamma = v[14], b.ln2.beta = v[15];
            return ad::sum(ad::mul(b.forward(ad::constant(xi), ad::constant(de)), ad::constant(w)));
        },
        pv);
    CHECK(params.size() == 16);
    CHECK(perr < 1e-4);
}

TEST_CASE("soft assignment examples") {
    Rng rng(7);
    const Mat z = rng.normal_matrix(5, 3);
    CHECK((soft_assign(z, rng.normal_matrix(1, 3), 1.0).array() - 1.0).abs().maxCoeff() < 1e-15);
    Mat mu(2, 2), p(1, 2);
    mu << -1, 0, 1, 0;
    p << 0, 3;
    const Mat q = soft_assign(p, mu, 1.0);
    CHECK(q(0, 0) == doctest::Approx(0.5));
    CHECK(q(0, 1) == doctest::Approx(0.5));
    double last = 0;
    for (double far : {10.0, 100.0, 1000.0}) {
        Mat m2(2, 2), at(1, 2);
        m2 << 0, 0, far, 0;
        at << 0, 0;
        const double q1 = soft_assign(at, m2, 1.0)(0, 0);
        CHECK(q1 > last);
        last = q1;
    }
    CHECK(last > 1 - 1e-5);
    // Cauchy kernel written out.
    const Mat c = rng.normal_matrix(3, 3);
    const Mat qa = soft_assign(z, c, 2.0);
    for (int i = 0; i < 5; ++i) {
        double tot = 0;
        for (int j = 0; j < 3; ++j) tot += 1 / (1 + (z.row(i) - c.row(j)).squaredNorm() / 2.0);
        for (int j = 0; j < 3; ++j) CHECK(qa(i, j) == doctest::Approx(1 / (1 + (z.row(i) - c.row(j)).squaredNorm() / 2.0) / tot));
    }
}

TEST_CASE("target distribution examples") {
    Mat onehot = Mat::Zero(4, 3);
    onehot(0, 0) = onehot(1, 1) = onehot(2, 2) = onehot(3, 0) = 1;
    CHECK(target_distribution(onehot) == onehot);
    const Mat uniform = Mat::Constant(6, 3, 1.0 / 3);
    CHECK((target_distribution(uniform).array() - 1.0 / 3).abs().maxCoeff() < 1e-15);
    Rng rng(8);
    const Mat q = random_q(rng, 10, 4), p = target_distribution(q);
    const Eigen::VectorXd f = q.colwise().sum().transpose();
    for (int i = 0; i < 10; ++i) {
        CHECK(p.row(i).sum() == doctest::Approx(1.0));
        CHECK(p.row(i).squaredNorm() >= q.row(i).squaredNorm() - 1e-15);
        double tot = 0;
        for (int j = 0; j < 4; ++j) tot += q(i, j) * q(i, j) / f(j);
        for (int j = 0; j < 4; ++j) CHECK(p(i, j) == doctest::Approx(q(i, j) * q(i, j) / f(j) / tot));
    }
    Mat empty = Mat::Zero(3, 2);
    empty.col(0).setOnes();
    try {
        target_distribution(empty);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find('1') != std::string::npos);
    }
}

TEST_CASE("clustering loss examples") {
    Rng rng(9);
    const Mat q = random_q(rng, 8, 3);
    CHECK(clustering_loss(q, q) == doctest::Approx(0.0));
    const int k = 4;
    Mat onehot = Mat::Zero(5, k);
    for (int i = 0; i < 5; ++i) onehot(i, i % k) = 1;
    CHECK(clustering_loss(onehot, Mat::Constant(5, k, 1.0 / k)) == doctest::Approx(5 * std::log(k)));
    for (int t = 0; t < 20; ++t) CHECK(clustering_loss(random_q(rng, 6, 3), random_q(rng, 6, 3)) >= 0);
    Mat zero_q = Mat::Zero(1, 2);
    zero_q(0, 1) = 1;
    Mat pp(1, 2);
    pp << 0.5, 0.5;
    CHECK(std::isfinite(clustering_loss(pp, zero_q)));
}

TEST_CASE("clustering loss gradient through the soft assignment") {
    Rng rng(10);
    const Mat p = target_distribution(random_q(rng, 6, 3));
    const double err = oracle::grad_error(
        [&](const std::vector<Var>& v) { return clustering_loss(p, soft_assign(v[0], v[1], 1.0)); },
        {rng.normal_matrix(6, 4), rng.normal_matrix(3, 4)});
    CHECK(err < 1e-4);
}

TEST_CASE("eigengap recovers block counts") {
    for (int k : {2, 3, 5}) {
        Mat z = Mat::Zero(4 * k, k);
        for (int b = 0; b < k; ++b)
            for (int i = 0; i < 4; ++i) z(b * 4 + i, b) = 1.0 + i;
        CHECK(infer_cluster_count(z).k == k);
    }
}

TEST_CASE("eigengap guards") {
    CHECK(infer_cluster_count(Mat::Ones(6, 3)).degenerate);
    CHECK(infer_cluster_count(Mat::Ones(6, 3)).k == 1);
    Mat z = Mat::Ones(4, 2);
    z.row(2).setZero();
    CHECK_THROWS_AS(infer_cluster_count(z), NumericError);
    CHECK_THROWS_AS(infer_cluster_count(Mat::Ones(2, 2)), DataError);
}

TEST_CASE("eigengap finds two Gaussian clouds") {
    int hits = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        Rng rng(100 + s);
        hits += infer_cluster_count(blobs(rng, 2, 50, 16, 1.0, 10.0).first).k == 2;
    }
    CHECK(hits >= 4);
}

TEST_CASE("kmeans on separated blobs") {
    Rng rng(11);
    const auto [x, y] = blobs(rng, 3, 20, 4, 0.1, 5.0);
    const auto r = kmeans(x, 3, 5, 1);
    CHECK(metrics::nmi(r.labels, y) == doctest::Approx(1.0));
    CHECK(kmeans(x, 3, 5, 1).labels == r.labels);
}

TEST_CASE("annotator clusters tight groups and is deterministic") {
    Rng rng(12);
    const auto [xi, y] = blobs(rng, 3, 30, 8, 0.3, 6.0);
    const Mat delta = xi * 0.1;
    AnnotatorConfig cfg;
    cfg.dim = 16;
    const auto r = train_annotator(xi, delta, 3, cfg, 5);
    CHECK(metrics::nmi(r.labels, y) >= 0.95);
    CHECK(train_annotator(xi, delta, 3, cfg, 5).labels == r.labels);
    CHECK((r.state.q.rowwise().sum().array() - 1).abs().maxCoeff() < 1e-9);
    CHECK((r.state.p.rowwise().sum().array() - 1).abs().maxCoeff() < 1e-9);
    CHECK(r.iterations <= cfg.max_iterations);

    const auto one = train_annotator(xi, delta, 1, cfg, 5);
    CHECK(std::all_of(one.labels.begin(), one.labels.end(), [](int l) { return l == 0; }));
    CHECK(one.iterations == 0);
    CHECK_THROWS(train_annotator(xi.topRows(2), delta.topRows(2), 3, cfg, 5));
}

TEST_CASE("inferred cluster count is recorded") {
    Rng rng(13);
    const auto [xi, y] = blobs(rng, 2, 25, 8, 0.3, 6.0);
    AnnotatorConfig cfg;
    cfg.dim = 16;
    const auto r = train_annotator(xi, xi * 0.1, 0, cfg, 2);
    CHECK(r.inferred);
    CHECK(r.k == r.eigengap.k);
    CHECK(!r.eigengap.eigenvalues.empty());
}
