#include "legs4/adam.hpp"
#include "legs4/codec.hpp"
#include "support.hpp"

#include <Eigen/QR>
#include <gtest/gtest.h>

using namespace legs4;
using legs4::testing::TempDir;

namespace {

MatrixXfR subspace_samples(int n, int D, int rank, uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd basis(D, rank);
    for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = rng.normal();
    basis = Eigen::HouseholderQR<Eigen::MatrixXd>(basis).householderQ() * Eigen::MatrixXd::Identity(D, rank);
    MatrixXfR x(n, D);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd c(rank);
        for (int k = 0; k < rank; ++k) c[k] = rng.normal();
        x.row(i) = (basis * c).normalized().cast<float>().transpose();
    }
    return x;
}

} // namespace

TEST(Adam, MinimisesQuadratic) {
    Eigen::VectorXd p = Eigen::VectorXd::Constant(3, 5.0);
    Adam<double> opt(3, {0.1});
    for (int i = 0; i < 2000; ++i) opt.step(p, 2.0 * (p - Eigen::Vector3d(1, -2, 0.5)));
    EXPECT_NEAR(p[0], 1.0, 1e-3);
    EXPECT_NEAR(p[1], -2.0, 1e-3);
    EXPECT_NEAR(p[2], 0.5, 1e-3);
}

TEST(Codec, OutputDims) {
    const auto c = make_codec(768, 128, {256}, 1);
    const Eigen::VectorXf x = Eigen::VectorXf::Random(768);
    const Eigen::VectorXf z = c.encode(x);
    EXPECT_EQ(z.size(), 128);
    EXPECT_NEAR(z.norm(), 1.0, 1e-5);
    EXPECT_EQ(c.decode(z).size(), 768);
    EXPECT_THROW(c.encode(Eigen::VectorXf(12)), Error);
}

TEST(Codec, ZeroInputFinite) {
    const auto c = make_codec(32, 8, {64}, 2);
    const Eigen::VectorXf z = c.encode(Eigen::VectorXf(Eigen::VectorXf::Zero(32)));
    EXPECT_TRUE(z.allFinite());
    EXPECT_TRUE(c.decode(z).allFinite());
}

TEST(Codec, GradientMatchesFiniteDifferences) {
    Mlp<double> enc({6, 5, 3}), dec({3, 5, 6});
    enc.init(11);
    dec.init(12);
    Rng rng(5);
    Eigen::MatrixXd x(4, 6);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    Eigen::VectorXd ge, gd;
    autoencoder_loss(enc, dec, x, 0.3, &ge, &gd);
    const double h = 1e-6;
    auto check = [&](Mlp<double>& net, const Eigen::VectorXd& g) {
        for (Eigen::Index i = 0; i < net.params().size(); ++i) {
            const double keep = net.params()[i];
            net.params()[i] = keep + h;
            const double up = autoencoder_loss<double>(enc, dec, x, 0.3, nullptr, nullptr);
            net.params()[i] = keep - h;
            const double down = autoencoder_loss<double>(enc, dec, x, 0.3, nullptr, nullptr);
            net.params()[i] = keep;
            const double fd = (up - down) / (2 * h);
            EXPECT_NEAR(g[i], fd, 1e-6 + 1e-5 * std::abs(fd)) << "param " << i;
        }
    };
    check(enc, ge);
    check(dec, gd);
}

TEST(Codec, ZeroCosineWeightIsMse) {
    const auto c = make_codec(8, 3, {7}, 4);
    const MatrixXfR xf = MatrixXfR::Random(5, 8);
    const Eigen::MatrixXf x = xf;
    const double loss = autoencoder_loss<float>(c.encoder, c.decoder, x, 0.0, nullptr, nullptr);
    const MatrixXfR y = c.decode(c.encode(xf));
    EXPECT_NEAR(loss, (y - xf).squaredNorm() / 5.0, 1e-5);
}

TEST(Codec, RecoversLowRankSubspace) {
    const MatrixXfR x = subspace_samples(2048, 64, 16, 21);
    CodecTrainConfig cfg;
    cfg.steps = 2000;
    cfg.batch_size = 256;
    cfg.hidden = {128};
    cfg.seed = 3;
    const auto codec = train_codec(x, 32, cfg);
    const MatrixXfR y = codec.decode(codec.encode(x));
    double mean_cos = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) mean_cos += x.row(i).dot(y.row(i)) / (x.row(i).norm() * y.row(i).norm());
    mean_cos /= double(x.rows());
    EXPECT_GE(mean_cos, 0.99);
    EXPECT_LT(codec.final_loss, codec.loss_trace.front());
}

TEST(Codec, DeterministicAndPersisted) {
    const MatrixXfR x = subspace_samples(256, 16, 4, 2);
    CodecTrainConfig cfg;
    cfg.steps = 50;
    cfg.batch_size = 64;
    cfg.hidden = {32};
    const auto a = train_codec(x, 8, cfg);
    const auto b = train_codec(x, 8, cfg);
    EXPECT_EQ(a.encoder.params(), b.encoder.params());
    EXPECT_EQ(a.loss_trace, b.loss_trace);
    TempDir dir("codec");
    save_codec(a, dir.path);
    const auto back = load_codec(dir.path);
    EXPECT_EQ(back.encoder.params(), a.encoder.params());
    EXPECT_EQ(back.decoder.params(), a.decoder.params());
    EXPECT_EQ(back.d, 8);
    EXPECT_EQ(back.encode(x), a.encode(x));
}

TEST(Codec, TooFewSamples) {
    CodecTrainConfig cfg;
    EXPECT_THROW(train_codec(MatrixXfR::Random(3, 16), 8, cfg), Error);
}
