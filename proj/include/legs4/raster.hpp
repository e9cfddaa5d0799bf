#pragma once

#include "legs4/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace legs4 {

struct TileConfig {
    int tile_size = 16;
    /// Splats contribute only where the Mahalanobis distance is within this many sigmas.
    double cutoff_sigma = 3.0;
    /// Added to the diagonal of every projected covariance (pixels^2).
    double eps_cov = 0.3;
    double near_plane = 0.01;
    /// Compositing stops once transmittance falls below this.
    double min_transmittance = 1e-4;
};

/// A Gaussian projected to the image plane.
struct ScreenSplat {
    int index = 0;
    Eigen::Vector2d mean2d;
    Eigen::Matrix2d cov2d;
    Eigen::Matrix2d conic;  // cov2d inverse
    double depth = 0;
    double opacity = 0;
    double radius = 0;  // conservative pixel radius of the cutoff ellipse
};

std::vector<ScreenSplat> project(const GaussianFrame& frame, const Camera& camera, const TileConfig& cfg = {});

/// Opacity-weighted Gaussian falloff at a pixel, or 0 outside the cutoff.
double splat_alpha(const ScreenSplat& s, double px, double py, double cutoff_sigma);

enum Channel : unsigned {
    kFeatures = 1u << 0,
    kRgb = 1u << 1,
    kDepth = 1u << 2,
};

/// Per-pixel compositing weights alpha_i * prod_{k<i}(1 - alpha_k), stored CSR
/// in front-to-back order. They fully determine any payload render.
struct Contributors {
    std::vector<uint32_t> offsets;  // H*W + 1
    std::vector<uint32_t> gaussian;
    std::vector<double> weight;
};

struct RenderOutput {
    int width = 0;
    int height = 0;
    Eigen::Index num_gaussians = 0;
    MatrixXfR features;   // (H*W) x d, empty unless requested
    MatrixXfR rgb;        // (H*W) x 3, empty unless requested
    Eigen::VectorXf depth;  // alpha-composited camera z, empty unless requested
    Eigen::VectorXf alpha;
    Contributors contributors;

    int pixel(int x, int y) const { return y * width + x; }
    /// Expected depth divided by alpha (0 where alpha vanishes).
    Eigen::VectorXf normalized_depth() const;
};

/// Renders the frame's stored latent features (when kFeatures is requested).
RenderOutput render(const GaussianFrame& frame, const Camera& camera, unsigned channels,
                    const TileConfig& cfg = {});

/// Renders with an explicit per-Gaussian feature payload (M x d).
RenderOutput render_with_features(const GaussianFrame& frame, const Camera& camera, const MatrixXfR& features,
                                  unsigned channels, const TileConfig& cfg = {});

/// Re-composites an arbitrary per-Gaussian payload with the weights of a
/// previous render. Result is (H*W) x cols.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> composite(
    const Contributors& ctx, const Eigen::MatrixBase<Derived>& payload) {
    using Scalar = typename Derived::Scalar;
    const auto pixels = static_cast<Eigen::Index>(ctx.offsets.size()) - 1;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out =
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(pixels, payload.cols());
    for (Eigen::Index p = 0; p < pixels; ++p)
        for (uint32_t k = ctx.offsets[p]; k < ctx.offsets[p + 1]; ++k)
            out.row(p) += static_cast<Scalar>(ctx.weight[k]) * payload.row(ctx.gaussian[k]);
    return out;
}

/// Gradient of sum(grad_pixels .* composite(payload)) with respect to the
/// payload: scatters each pixel gradient to its contributors by weight.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> composite_backward(
    const Contributors& ctx, Eigen::Index num_gaussians, const Eigen::MatrixBase<Derived>& grad_pixels) {
    using Scalar = typename Derived::Scalar;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> grad =
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(num_gaussians,
                                                                                     grad_pixels.cols());
    const auto pixels = static_cast<Eigen::Index>(ctx.offsets.size()) - 1;
    for (Eigen::Index p = 0; p < pixels; ++p)
        for (uint32_t k = ctx.offsets[p]; k < ctx.offsets[p + 1]; ++k)
            grad.row(ctx.gaussian[k]) += static_cast<Scalar>(ctx.weight[k]) * grad_pixels.row(p);
    return grad;
}

/// Per-Gaussian feature gradients (M x d) for an upstream gradient on the
/// rendered feature image ((H*W) x d).
MatrixXfR render_backward(const RenderOutput& ctx, const MatrixXfR& grad_features);

} // namespace legs4
