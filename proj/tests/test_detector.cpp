#include "facd/data.hpp"
#include "facd/detector.hpp"
#include "facd/errors.hpp"
#include "oracle.hpp"

#include <doctest.h>

#include <deque>

using namespace facd;
using namespace facd::detect;
using ad::Mat;
using ad::Var;

namespace {

Mat read_out(const MemoryBank& bank, const Mat& z) {
    ad::NoGradGuard off;
    return bank.read(ad::constant(z)).value();
}

DetectorConfig tiny_config() {
    DetectorConfig c;
    c.encoder = {32, 8};
    c.critic = {16};
    c.epochs = 40;
    c.batch_size = 64;
    c.memory.size = 64;
    c.adam.learning_rate = 1e-3;
    return c;
}

// Reference normals, plus held-out normals and anomalies from the same generator.
struct Split {
    Mat reference, normals, anomalies;
};

Split tiny_split(std::uint64_t seed) {
    data::SyntheticSpec s;
    s.n_features = 16;
    s.reference_size = 200;
    s.n_domains = 1;
    s.target_sizes = {200};
    s.anomaly_ratios = {0.3};
    s.domain_shift_magnitude = 0;
    s.seed = seed;
    const auto b = data::synth_generate(s);
    Split out;
    out.reference = b.reference.values;
    std::vector<Eigen::Index> n, a;
    for (Eigen::Index i = 0; i < b.targets[0].size(); ++i)
        (b.targets[0].labels[static_cast<std::size_t>(i)].rfind("anomaly_", 0) == 0 ? a : n).push_back(i);
    out.normals = b.targets[0].values(n, Eigen::placeholders::all);
    out.anomalies = b.targets[0].values(a, Eigen::placeholders::all);
    return out;
}

double mean_l1(const Mat& d) { return d.cwiseAbs().rowwise().sum().mean(); }

}  // namespace

TEST_CASE("single-row bank returns that row") {
    MemoryBank bank(1, 3, 1.0);
    Mat r(1, 3);
    r << 1, -2, 0.5;
    bank.enqueue(r);
    Rng rng(1);
    const Mat out = read_out(bank, rng.normal_matrix(4, 3));
    for (int i = 0; i < 4; ++i) CHECK((out.row(i) - r).norm() < 1e-15);
}

TEST_CASE("identical bank rows return that row") {
    MemoryBank bank(5, 2, 0.3);
    Mat r(1, 2);
    r << 0.4, 3;
    bank.enqueue(r.replicate(5, 1));
    Rng rng(2);
    const Mat out = read_out(bank, rng.normal_matrix(3, 2));
    CHECK((out.rowwise() - r.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("small temperature selects the highest inner product row") {
    Rng rng(3);
    MemoryBank bank(6, 4, 1e-4);
    const Mat rows = rng.normal_matrix(6, 4);
    bank.enqueue(rows);
    const Mat z = rng.normal_matrix(5, 4);
    const Mat out = read_out(bank, z);
    for (int i = 0; i < 5; ++i) {
        Eigen::Index best = 0;
        (rows * z.row(i).transpose()).maxCoeff(&best);
        CHECK((out.row(i) - rows.row(best)).norm() < 1e-8);
    }
}

TEST_CASE("unfilled bank is bypassed, strict mode throws") {
    MemoryBank bank(4, 2, 1.0);
    bank.enqueue(Mat::Ones(3, 2));
    const Mat z = Mat::Constant(2, 2, 7.0);
    CHECK(read_out(bank, z) == z);
    MemoryBank strict(4, 2, 1.0, true);
    CHECK_THROWS_AS(read_out(strict, z), NumericError);
}

TEST_CASE("attention weights are probability vectors") {
    Rng rng(4);
    for (double tau : {0.05, 1.0, 20.0}) {
        MemoryBank bank(7, 3, tau);
        bank.enqueue(rng.normal_matrix(7, 3) * 5.0);
        const Mat w = bank.attention_weights(rng.normal_matrix(10, 3) * 5.0);
        CHECK((w.array() >= 0).all());
        CHECK((w.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("enqueue matches a FIFO queue") {
    SUBCASE("full batch fills in order") {
        MemoryBank bank(3, 1, 1.0);
        Mat r(3, 1);
        r << 1, 2, 3;
        bank.enqueue(r);
        CHECK(bank.entries() == r);
    }
    SUBCASE("one row twice into a size-2 bank") {
        MemoryBank bank(2, 1, 1.0);
        bank.enqueue(Mat::Constant(1, 1, 9));
        bank.enqueue(Mat::Constant(1, 1, 9));
        CHECK((bank.entries().array() == 9).all());
    }
    SUBCASE("interleaved enqueues") {
        Rng rng(5);
        const int size = 5;
        MemoryBank bank(size, 2, 1.0);
        std::deque<Eigen::RowVectorXd> fifo;
        for (int step = 0; step < 30; ++step) {
            const Mat batch = rng.normal_matrix(1 + static_cast<int>(rng.index(size)), 2);
            bank.enqueue(batch);
            for (Eigen::Index i = 0; i < batch.rows(); ++i) {
                fifo.push_back(batch.row(i));
                if (static_cast<int>(fifo.size()) > size) fifo.pop_front();
            }
            // Bank rows in age order start at the cursor once the bank has wrapped.
            const int n = static_cast<int>(fifo.size());
            for (int k = 0; k < n; ++k) {
                const int slot = n < size ? k : (bank.cursor() + k) % size;
                CHECK((bank.entries().row(slot) - fifo[static_cast<std::size_t>(k)]).norm() == 0.0);
            }
        }
    }
}

TEST_CASE("memory attention gradients") {
    Rng rng(6);
    const Mat w = rng.normal_matrix(3, 4);
    const double err = oracle::grad_error(
        [&](const std::vector<Var>& v) { return ad::sum(ad::mul(memory_attention(v[0], v[1], 0.5), ad::constant(w))); },
        {rng.normal_matrix(3, 4), rng.normal_matrix(5, 4)});
    CHECK(err < 1e-4);
}

TEST_CASE("generator loss examples") {
    const LossWeights w{50, 1, 10};
    Rng rng(7);
    const Mat x = rng.normal_matrix(6, 3);
    CHECK(generator_loss(ad::constant(x), ad::constant(x), ad::constant(Mat::Zero(6, 1)), w).scalar() == 0.0);
    // One feature with |x - xhat| = 1 everywhere.
    const Mat x1 = rng.normal_matrix(6, 1);
    CHECK(generator_loss(ad::constant(x1), ad::constant(x1.array() + 1.0), ad::constant(Mat::Zero(6, 1)), LossWeights{1, 0, 0}).scalar() ==
          doctest::Approx(1.0));
    const Mat xhat = rng.normal_matrix(6, 3), scores = rng.normal_matrix(6, 1);
    double l1 = 0;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 3; ++j) l1 += std::abs(x(i, j) - xhat(i, j));
    const double expect = 50 * l1 / 6 - scores.sum() / 6;
    CHECK(std::abs(generator_loss(ad::constant(x), ad::constant(xhat), ad::constant(scores), w).scalar() - expect) < 1e-9);
    CHECK_THROWS(generator_loss(ad::constant(x), ad::constant(x1), ad::constant(scores), w));
}

TEST_CASE("critic loss examples") {
    Rng rng(8);
    const Mat s = rng.normal_matrix(5, 1), f = rng.normal_matrix(5, 1);
    CHECK(critic_loss(ad::constant(s), ad::constant(s), ad::scalar(0), 10).scalar() == 0.0);
    CHECK(critic_loss(ad::constant(s), ad::constant(f), ad::scalar(3), 0).scalar() == doctest::Approx(f.mean() - s.mean()));
    CHECK(critic_loss(ad::constant(s), ad::constant(f), ad::scalar(0.25), 10).scalar() == doctest::Approx(f.mean() - s.mean() + 2.5));
    CHECK_THROWS(critic_loss(ad::constant(s), ad::constant(Mat::Zero(4, 1)), ad::scalar(0), 1));
}

TEST_CASE("zero epochs returns the initialized model") {
    const Split sp = tiny_split(1);
    DetectorConfig c = tiny_config();
    c.epochs = 0;
    const Detector trained = train_phase1(sp.reference, c, 3);
    const Detector fresh(16, c, 3);
    CHECK(trained.reconstruct(sp.normals) == fresh.reconstruct(sp.normals));
}

TEST_CASE("identical seeds give identical checkpoints") {
    const Split sp = tiny_split(2);
    DetectorConfig c = tiny_config();
    c.epochs = 3;
    CHECK(train_phase1(sp.reference, c, 5).to_json() == train_phase1(sp.reference, c, 5).to_json());
}

TEST_CASE("checkpoint JSON round trip reproduces reconstructions") {
    const Split sp = tiny_split(2);
    DetectorConfig c = tiny_config();
    c.epochs = 3;
    const Detector a = train_phase1(sp.reference, c, 5);
    const Detector b = Detector::from_json(a.to_json());
    CHECK(a.reconstruct(sp.anomalies) == b.reconstruct(sp.anomalies));
}

TEST_CASE("deviation of a constant reconstruction is x minus the constant") {
    DetectorConfig c = tiny_config();
    c.memory.enabled = false;
    Detector d(4, c, 1);
    auto p = d.decoder.parameters();
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (i + 2 == p.size()) p[i].var.mutable_value().setZero();  // last weight
        if (i + 1 == p.size()) p[i].var.mutable_value() << 1, 2, 3, 4;
    }
    Rng rng(2);
    const Mat x = rng.normal_matrix(5, 4);
    Mat expect = x;
    expect.rowwise() -= Eigen::RowVector4d(1, 2, 3, 4);
    CHECK((reconstruction_deviation(d, x) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("trained detector reconstructs held-out normals better than anomalies") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Split sp = tiny_split(seed);
        const Detector d = train_phase1(sp.reference, tiny_config(), seed);
        const double normal = mean_l1(reconstruction_deviation(d, sp.normals));
        const double anomaly = mean_l1(reconstruction_deviation(d, sp.anomalies));
        wins += normal < anomaly;
    }
    CHECK(wins >= 4);
}

TEST_CASE("config validation") {
    DetectorConfig c = tiny_config();
    c.batch_size = 128;  // larger than the bank
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.memory.tau = 0;
    CHECK_THROWS_AS(Detector(4, c, 1), ConfigError);
    CHECK(detector_config_to_json(detector_config_from_json(detector_config_to_json(tiny_config()))) == detector_config_to_json(tiny_config()));
}
