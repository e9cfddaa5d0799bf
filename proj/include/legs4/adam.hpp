#pragma once

#include <Eigen/Core>

#include <cmath>

namespace legs4 {

struct AdamConfig {
    double lr = 7e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over a flat parameter vector.
template <typename Scalar>
class Adam {
public:
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Adam(Eigen::Index size, AdamConfig cfg) : cfg_(cfg), m_(Vec::Zero(size)), v_(Vec::Zero(size)) {}

    void step(Eigen::Ref<Vec> params, const Eigen::Ref<const Vec>& grad) {
        ++t_;
        const Scalar b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
        m_ = b1 * m_ + (Scalar(1) - b1) * grad;
        v_ = b2 * v_ + (Scalar(1) - b2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
        const Scalar step = static_cast<Scalar>(cfg_.lr * std::sqrt(c2) / c1);
        const Scalar eps = static_cast<Scalar>(cfg_.eps * std::sqrt(c2));
        params.array() -= step * m_.array() / (v_.array().sqrt() + eps);
    }

    long steps() const { return t_; }

private:
    AdamConfig cfg_;
    Vec m_, v_;
    long t_ = 0;
};

} // namespace legs4
