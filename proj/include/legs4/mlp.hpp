#pragma once

#include "legs4/error.hpp"
#include "legs4/rng.hpp"

#include <Eigen/Core>

#include <cmath>
#include <vector>

namespace legs4 {

/// Fully connected network with tanh between layers and a linear output.
/// All weights live in one flat vector so optimizers and gradient checks can
/// treat the network as a single parameter block. Batches are rows.
template <typename Scalar>
class Mlp {
public:
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using ConstMatMap = Eigen::Map<const Mat>;
    using MatMap = Eigen::Map<Mat>;

    Mlp() = default;

    explicit Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
        if (sizes_.size() < 2) throw Error("mlp: need at least input and output sizes");
        Eigen::Index total = 0;
        for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
            if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) throw Error("mlp: layer sizes must be positive");
            offsets_.push_back(total);
            total += static_cast<Eigen::Index>(sizes_[l + 1]) * sizes_[l] + sizes_[l + 1];
        }
        params_ = Vec::Zero(total);
    }

    /// Xavier-uniform weights, zero biases.
    void init(uint64_t seed) {
        Rng rng(seed);
        for (size_t l = 0; l < layers(); ++l) {
            const double bound = std::sqrt(6.0 / (sizes_[l] + sizes_[l + 1]));
            auto w = weight(l);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
            bias(l).setZero();
        }
    }

    size_t layers() const { return sizes_.size() - 1; }
    int in_dim() const { return sizes_.front(); }
    int out_dim() const { return sizes_.back(); }
    const std::vector<int>& sizes() const { return sizes_; }

    Vec& params() { return params_; }
    const Vec& params() const { return params_; }

    MatMap weight(size_t l) { return MatMap(params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]); }
    ConstMatMap weight(size_t l) const { return ConstMatMap(params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]); }
    Eigen::Map<Vec> bias(size_t l) {
        return Eigen::Map<Vec>(params_.data() + offsets_[l] + Eigen::Index(sizes_[l + 1]) * sizes_[l], sizes_[l + 1]);
    }
    Eigen::Map<const Vec> bias(size_t l) const {
        return Eigen::Map<const Vec>(params_.data() + offsets_[l] + Eigen::Index(sizes_[l + 1]) * sizes_[l],
                                     sizes_[l + 1]);
    }

    /// Activations retained for backward: acts[0] is the input, acts[l+1]
    /// the output of layer l (post-tanh for hidden layers).
    struct Cache {
        std::vector<Mat> acts;
    };

    Mat forward(const Mat& x, Cache* cache = nullptr) const {
        if (x.cols() != in_dim()) throw Error("mlp: input has wrong dimension");
        Mat h = x;
        if (cache) {
            cache->acts.clear();
            cache->acts.push_back(h);
        }
        for (size_t l = 0; l < layers(); ++l) {
            Mat z = h * weight(l).transpose();
            z.rowwise() += bias(l).transpose();
            if (l + 1 < layers()) z = z.array().tanh().matrix();
            h = std::move(z);
            if (cache) cache->acts.push_back(h);
        }
        return h;
    }

    /// Accumulates d(loss)/d(params) into grad (same layout as params) and
    /// returns d(loss)/d(input).
    Mat backward(const Cache& cache, const Mat& grad_out, Vec& grad) const {
        if (grad.size() != params_.size()) grad = Vec::Zero(params_.size());
        Mat g = grad_out;
        for (size_t l = layers(); l-- > 0;) {
            if (l + 1 < layers()) g.array() *= (Scalar(1) - cache.acts[l + 1].array().square());
            const Mat& input = cache.acts[l];
            MatMap(grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]).noalias() += g.transpose() * input;
            Eigen::Map<Vec>(grad.data() + offsets_[l] + Eigen::Index(sizes_[l + 1]) * sizes_[l], sizes_[l + 1]) +=
                g.colwise().sum().transpose();
            g = g * weight(l);
        }
        return g;
    }

private:
    std::vector<int> sizes_;
    std::vector<Eigen::Index> offsets_;
    Vec params_;
};

} // namespace legs4
