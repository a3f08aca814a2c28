#include "facd/adapter.hpp"
#include "facd/data.hpp"
#include "facd/errors.hpp"
#include "facd/metrics.hpp"
#include "facd/scorer.hpp"

#include <doctest.h>

using namespace facd;
using namespace facd::adapt;
using ad::Mat;

namespace {

AdapterConfig small_config() {
    AdapterConfig c;
    c.encoder = {64, 16};
    c.critic = {32};
    c.epochs = 2;
    c.batch_size = 64;
    c.adam.learning_rate = 1e-3;
    return c;
}

Mat ae_path(const Adapter& a, const Mat& x) { return a.decoder.predict(a.encoder.predict(x)); }

struct Synthetic {
    data::DatasetBundle bundle;
    std::vector<Mat> target_normals;
    std::vector<std::vector<std::string>> normal_labels;
    Mat anomalies;
    std::vector<int> anomaly_domains;
    std::vector<int> anomaly_subtypes;
};

Synthetic make_synthetic(std::uint64_t seed) {
    data::SyntheticSpec s;
    s.n_features = 16;
    s.reference_size = 400;
    s.target_sizes = {300, 300};
    s.seed = seed;
    Synthetic out;
    out.bundle = data::synth_generate(s);
    for (std::size_t k = 0; k < 2; ++k) {
        const auto& t = out.bundle.targets[k];
        std::vector<Eigen::Index> keep;
        std::vector<std::string> labs;
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            const auto& l = t.labels[static_cast<std::size_t>(i)];
            if (l.rfind("normal_", 0) == 0) {
                keep.push_back(i);
                labs.push_back(l);
            } else {
                out.anomalies.conservativeResize(out.anomalies.rows() + 1, t.features());
                out.anomalies.row(out.anomalies.rows() - 1) = t.values.row(i);
                out.anomaly_domains.push_back(static_cast<int>(k));
                out.anomaly_subtypes.push_back(std::stoi(l.substr(8)));
            }
        }
        out.target_normals.push_back(t.values(keep, Eigen::placeholders::all));
        out.normal_labels.push_back(labs);
    }
    return out;
}

}  // namespace

TEST_CASE("zero style reduces adaptation to the autoencoder path") {
    Adapter a(6, 2, small_config(), 1);
    Rng rng(1);
    const Mat x = rng.normal_matrix(5, 6);
    CHECK(a.adapt(x, {0, 1, 0, 1, 1}) == ae_path(a, x));
}

TEST_CASE("reference rows ignore the style matrix") {
    Adapter a(6, 2, small_config(), 1);
    Rng rng(2);
    a.style.mutable_value() = rng.normal_matrix(2, 16) * 3.0;
    const Mat x = rng.normal_matrix(5, 6);
    CHECK(a.adapt(x, {-1, -1, -1, -1, -1}) == ae_path(a, x));
}

TEST_CASE("a target row is shifted by exactly its style row in latent space") {
    Adapter a(6, 3, small_config(), 1);
    Rng rng(3);
    a.style.mutable_value() = rng.normal_matrix(3, 16);
    const Mat x = rng.normal_matrix(4, 6);
    const std::vector<int> dom{2, 0, -1, 1};
    const Mat z = a.encoder.predict(x);
    Mat shifted = z;
    for (std::size_t i = 0; i < dom.size(); ++i)
        if (dom[i] >= 0) shifted.row(static_cast<Eigen::Index>(i)) -= a.style.value().row(dom[i]);
    CHECK((a.adapt(x, dom) - a.decoder.predict(shifted)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((adapt_anomalies(a, x, dom) - a.decoder.predict(shifted)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK_THROWS(a.adapt(x, {3, 0, 0, 0}));
}

TEST_CASE("kin match picks an exact duplicate and handles a pool of one") {
    Rng rng(4);
    const Mat pool = rng.normal_matrix(20, 5);
    Mat query(3, 5);
    query.row(0) = pool.row(7);
    query.row(1) = pool.row(13);
    query.row(2) = pool.row(0);
    const auto r = kin_match(query, pool);
    CHECK(r.index == std::vector<std::size_t>{7, 13, 0});
    CHECK(kin_match(query, pool.topRows(1)).index == std::vector<std::size_t>{0, 0, 0});
    CHECK_THROWS_AS(kin_match(query, Mat(0, 5)), DataError);
}

TEST_CASE("kin ties go to the smallest pool index") {
    Mat pool(3, 1), query(1, 1);
    pool << 1, -1, 1;
    query << 0;
    CHECK(kin_match(query, pool).index[0] == 0);
}

TEST_CASE("kin match is a deterministic brute-force argmax") {
    Rng rng(5);
    const Mat q = rng.normal_matrix(9, 4), pool = rng.normal_matrix(30, 4);
    const auto r = kin_match(q, pool);
    CHECK(r.bandwidth == kin_match(q, pool).bandwidth);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        Eigen::Index best = 0;
        (pool.rowwise() - q.row(i)).rowwise().squaredNorm().minCoeff(&best);
        CHECK(r.index[static_cast<std::size_t>(i)] == static_cast<std::size_t>(best));
    }
}

TEST_CASE("no targets leaves an empty style matrix") {
    Rng rng(6);
    const Mat ref = rng.normal_matrix(40, 6);
    const Adapter a = train_phase2(ref, {}, small_config(), 3);
    CHECK(a.style.rows() == 0);
    CHECK(a.adapt(ref, std::vector<int>(40, -1)).rows() == 40);
}

TEST_CASE("empty post-exclusion dataset is rejected") {
    Rng rng(7);
    CHECK_THROWS_AS(train_phase2(rng.normal_matrix(40, 6), {Mat(0, 6)}, small_config(), 3), DataError);
}

TEST_CASE("seeded training is deterministic and checkpoints round trip") {
    Rng rng(8);
    const Mat ref = rng.normal_matrix(60, 6), t0 = rng.normal_matrix(50, 6);
    const Adapter a = train_phase2(ref, {t0}, small_config(), 9);
    const Adapter b = train_phase2(ref, {t0}, small_config(), 9);
    CHECK(a.to_json() == b.to_json());
    const Adapter c = Adapter::from_json(a.to_json());
    CHECK(c.adapt(t0, std::vector<int>(50, 0)) == a.adapt(t0, std::vector<int>(50, 0)));
    CHECK(kin_query(c, t0, std::vector<int>(50, 0)) == kin_query(a, t0, std::vector<int>(50, 0)));
}

TEST_CASE("training on synthetic domains aligns normals and keeps subtypes apart") {
    const Synthetic syn = make_synthetic(2);
    AdapterConfig cfg = small_config();
    cfg.encoder = {128, 64};
    cfg.critic = {64, 32};
    cfg.epochs = 60;
    cfg.adam.learning_rate = 3e-4;
    const Mat& ref = syn.bundle.reference.values;
    const Adapter a = train_phase2(ref, syn.target_normals, cfg, 4);

    Mat before(0, ref.cols()), after(0, ref.cols());
    for (int k = 0; k < 2; ++k) {
        const Mat& t = syn.target_normals[static_cast<std::size_t>(k)];
        before.conservativeResize(before.rows() + t.rows(), Eigen::NoChange);
        before.bottomRows(t.rows()) = t;
        after.conservativeResize(after.rows() + t.rows(), Eigen::NoChange);
        after.bottomRows(t.rows()) = a.adapt(t, std::vector<int>(static_cast<std::size_t>(t.rows()), k));
    }
    const double mmd_before = score::linear_mmd2_unbiased(before, ref);
    const double mmd_after = score::linear_mmd2_unbiased(after, ref);
    MESSAGE("mmd before " << mmd_before << " after " << mmd_after);
    CHECK(mmd_after <= 0.3 * mmd_before);

    int agree = 0, total = 0;
    for (int k = 0; k < 2; ++k) {
        const Mat& t = syn.target_normals[static_cast<std::size_t>(k)];
        const auto kin = kin_match(kin_query(a, t, std::vector<int>(static_cast<std::size_t>(t.rows()), k)), a.encode(ref));
        for (std::size_t i = 0; i < kin.index.size(); ++i, ++total)
            agree += syn.bundle.reference.labels[kin.index[i]] == syn.normal_labels[static_cast<std::size_t>(k)][i];
    }
    MESSAGE("kin type agreement " << double(agree) / total);
    CHECK(agree >= 0.9 * total);

    const Mat xi = adapt_anomalies(a, syn.anomalies, syn.anomaly_domains);
    CHECK(metrics::silhouette(xi, syn.anomaly_subtypes) > 0);
}
