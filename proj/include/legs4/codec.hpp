#pragma once

#include "legs4/adam.hpp"
#include "legs4/mlp.hpp"
#include "legs4/scene.hpp"

#include <filesystem>
#include <vector>

namespace legs4 {

struct CodecTrainConfig {
    double lr = 7e-4;
    /// Feature vectors per Adam step.
    int batch_size = 4096;
    int steps = 2000;
    /// When positive, overrides steps with epochs * ceil(samples / batch_size).
    int epochs = 0;
    double cosine_weight = 1e-3;
    uint64_t seed = 0;
    std::vector<int> hidden = {384};

    void validate() const;
};

/// Scene-specific autoencoder. The encoder output is L2-normalised, so
/// latents live on the unit sphere of R^d.
struct CodecParams {
    int D = 0;
    int d = 0;
    Mlp<float> encoder;
    Mlp<float> decoder;
    double cosine_weight = 1e-3;
    uint64_t seed = 0;
    double final_loss = 0.0;
    std::vector<double> loss_trace;

    MatrixXfR encode(const MatrixXfR& x) const;  // N x D -> N x d
    MatrixXfR decode(const MatrixXfR& z) const;  // N x d -> N x D
    Eigen::VectorXf encode(const Eigen::VectorXf& x) const;
    Eigen::VectorXf decode(const Eigen::VectorXf& z) const;
};

CodecParams make_codec(int D, int d, const std::vector<int>& hidden, uint64_t seed);

/// Minimises mean ||x - dec(enc(x))||^2 + cosine_weight * (1 - cos(x, dec(enc(x)))).
CodecParams train_codec(const MatrixXfR& samples, int d, const CodecTrainConfig& cfg);

/// Reconstruction loss of a batch and, if the grad pointers are non-null,
/// its gradients with respect to encoder and decoder parameters.
template <typename Scalar>
double autoencoder_loss(const Mlp<Scalar>& enc, const Mlp<Scalar>& dec,
                        const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x, double cosine_weight,
                        Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* grad_enc,
                        Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* grad_dec) {
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    typename Mlp<Scalar>::Cache enc_cache, dec_cache;
    const Mat raw = enc.forward(x, &enc_cache);
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norms = raw.rowwise().norm().cwiseMax(Scalar(1e-12));
    const Mat z = norms.cwiseInverse().asDiagonal() * raw;
    const Mat y = dec.forward(z, &dec_cache);
    const Eigen::Index n = x.rows();
    const Scalar lam = static_cast<Scalar>(cosine_weight);
    double loss = 0.0;
    Mat grad_y(n, y.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto xi = x.row(i);
        const auto yi = y.row(i);
        const Scalar xn = std::max(xi.norm(), Scalar(1e-12));
        const Scalar yn = std::max(yi.norm(), Scalar(1e-12));
        const Scalar cos = xi.dot(yi) / (xn * yn);
        loss += static_cast<double>((yi - xi).squaredNorm() + lam * (Scalar(1) - cos));
        grad_y.row(i) = (Scalar(2) * (yi - xi) - lam * (xi / (xn * yn) - cos * yi / (yn * yn))) / Scalar(n);
    }
    loss /= static_cast<double>(n);
    if (grad_enc || grad_dec) {
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> scratch;
        auto* gd = grad_dec ? grad_dec : &scratch;
        const Mat grad_z = dec.backward(dec_cache, grad_y, *gd);
        if (grad_enc) {
            // d/d raw of raw/|raw|: (g - z (z.g)) / |raw|
            Mat grad_raw(n, z.cols());
            for (Eigen::Index i = 0; i < n; ++i)
                grad_raw.row(i) = (grad_z.row(i) - z.row(i) * z.row(i).dot(grad_z.row(i))) / norms[i];
            enc.backward(enc_cache, grad_raw, *grad_enc);
        }
    }
    return loss;
}

void save_codec(const CodecParams& codec, const std::filesystem::path& dir);
CodecParams load_codec(const std::filesystem::path& dir);

} // namespace legs4
