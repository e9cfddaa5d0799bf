#include "legs4/raster.hpp"

#include "legs4/error.hpp"
#include "legs4/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace legs4 {

namespace {

Eigen::Matrix3d quat_to_rotation(const Eigen::Vector4d& q) {
    return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized().toRotationMatrix();
}

struct TileResult {
    std::vector<uint32_t> count;  // per pixel in the tile, row-major within the tile
    std::vector<uint32_t> gaussian;
    std::vector<double> weight;
};

} // namespace

std::vector<ScreenSplat> project(const GaussianFrame& frame, const Camera& camera, const TileConfig& cfg) {
    std::vector<ScreenSplat> out;
    const Eigen::Matrix3d w = camera.rotation();
    const Eigen::Vector3d trans = camera.translation();
    const double lim_x = 1.3 * 0.5 * camera.width / camera.fx;
    const double lim_y = 1.3 * 0.5 * camera.height / camera.fy;
    out.reserve(static_cast<size_t>(frame.size()));
    for (Eigen::Index i = 0; i < frame.size(); ++i) {
        const Eigen::Vector3d p = w * frame.means.row(i).transpose().cast<double>() + trans;
        if (p.z() <= cfg.near_plane) continue;
        const Eigen::Matrix3d r = quat_to_rotation(frame.rotations.row(i).transpose().cast<double>());
        const Eigen::Vector3d s = frame.scales.row(i).transpose().cast<double>();
        const Eigen::Matrix3d m = r * s.asDiagonal();
        const Eigen::Matrix3d cov3d = m * m.transpose();

        const double z = p.z();
        const double tx = std::clamp(p.x() / z, -lim_x, lim_x) * z;
        const double ty = std::clamp(p.y() / z, -lim_y, lim_y) * z;
        Eigen::Matrix<double, 2, 3> jac;
        jac << camera.fx / z, 0, -camera.fx * tx / (z * z), 0, camera.fy / z, -camera.fy * ty / (z * z);
        const Eigen::Matrix<double, 2, 3> tw = jac * w;
        Eigen::Matrix2d cov2d = tw * cov3d * tw.transpose();
        cov2d(0, 1) = cov2d(1, 0) = 0.5 * (cov2d(0, 1) + cov2d(1, 0));
        cov2d(0, 0) += cfg.eps_cov;
        cov2d(1, 1) += cfg.eps_cov;
        const double det = cov2d.determinant();
        if (!(det > 0)) continue;

        ScreenSplat splat;
        splat.index = static_cast<int>(i);
        splat.mean2d = camera.project_camera(p);
        splat.cov2d = cov2d;
        splat.conic = cov2d.inverse();
        splat.depth = z;
        splat.opacity = frame.opacities[i];
        const double half_trace = 0.5 * (cov2d(0, 0) + cov2d(1, 1));
        const double lambda_max = half_trace + std::sqrt(std::max(0.0, half_trace * half_trace - det));
        splat.radius = std::ceil(cfg.cutoff_sigma * std::sqrt(lambda_max));
        out.push_back(splat);
    }
    return out;
}

double splat_alpha(const ScreenSplat& s, double px, double py, double cutoff_sigma) {
    const double dx = px - s.mean2d.x();
    const double dy = py - s.mean2d.y();
    const double maha = s.conic(0, 0) * dx * dx + 2.0 * s.conic(0, 1) * dx * dy + s.conic(1, 1) * dy * dy;
    if (maha > cutoff_sigma * cutoff_sigma) return 0.0;
    return s.opacity * std::exp(-0.5 * maha);
}

Eigen::VectorXf RenderOutput::normalized_depth() const {
    Eigen::VectorXf out = Eigen::VectorXf::Zero(alpha.size());
    if (depth.size() != alpha.size()) return out;
    for (Eigen::Index i = 0; i < alpha.size(); ++i)
        if (alpha[i] > 1e-6f) out[i] = depth[i] / alpha[i];
    return out;
}

RenderOutput render(const GaussianFrame& frame, const Camera& camera, unsigned channels, const TileConfig& cfg) {
    if (channels & kFeatures) {
        if (!frame.latent_features) throw Error("missing latent features for frame " + std::to_string(frame.t));
        return render_with_features(frame, camera, *frame.latent_features, channels, cfg);
    }
    return render_with_features(frame, camera, MatrixXfR(frame.size(), 0), channels, cfg);
}

RenderOutput render_with_features(const GaussianFrame& frame, const Camera& camera, const MatrixXfR& features,
                                  unsigned channels, const TileConfig& cfg) {
    if (cfg.tile_size < 4) throw Error("tile size must be >= 4");
    if ((channels & kFeatures) && features.rows() != frame.size())
        throw Error("feature payload has " + std::to_string(features.rows()) + " rows, frame has " +
                    std::to_string(frame.size()) + " Gaussians");
    const int width = camera.width;
    const int height = camera.height;
    const int ts = cfg.tile_size;
    const int tiles_x = (width + ts - 1) / ts;
    const int tiles_y = (height + ts - 1) / ts;

    std::vector<ScreenSplat> splats = project(frame, camera, cfg);
    std::sort(splats.begin(), splats.end(), [](const ScreenSplat& a, const ScreenSplat& b) {
        return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
    });

    // Splats are appended in depth order, so every tile list is already sorted.
    std::vector<std::vector<uint32_t>> tile_lists(static_cast<size_t>(tiles_x) * tiles_y);
    for (size_t si = 0; si < splats.size(); ++si) {
        const auto& s = splats[si];
        const int x0 = std::max(0, static_cast<int>(std::floor((s.mean2d.x() - s.radius) / ts)));
        const int x1 = std::min(tiles_x - 1, static_cast<int>(std::floor((s.mean2d.x() + s.radius) / ts)));
        const int y0 = std::max(0, static_cast<int>(std::floor((s.mean2d.y() - s.radius) / ts)));
        const int y1 = std::min(tiles_y - 1, static_cast<int>(std::floor((s.mean2d.y() + s.radius) / ts)));
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx) tile_lists[static_cast<size_t>(ty) * tiles_x + tx].push_back(si);
    }

    const bool want_feat = channels & kFeatures;
    const bool want_rgb = channels & kRgb;
    const bool want_depth = channels & kDepth;
    const Eigen::Index d = want_feat ? features.cols() : 0;

    RenderOutput out;
    out.width = width;
    out.height = height;
    out.num_gaussians = frame.size();
    const Eigen::Index npix = static_cast<Eigen::Index>(width) * height;
    out.alpha = Eigen::VectorXf::Zero(npix);
    if (want_feat) out.features = MatrixXfR::Zero(npix, d);
    if (want_rgb) out.rgb = MatrixXfR::Zero(npix, 3);
    if (want_depth) out.depth = Eigen::VectorXf::Zero(npix);

    std::vector<TileResult> results(tile_lists.size());
    parallel_for(tile_lists.size(), [&](size_t tile) {
        const int tx = static_cast<int>(tile % tiles_x);
        const int ty = static_cast<int>(tile / tiles_x);
        const int px0 = tx * ts, py0 = ty * ts;
        const int px1 = std::min(width, px0 + ts), py1 = std::min(height, py0 + ts);
        auto& res = results[tile];
        res.count.assign(static_cast<size_t>(px1 - px0) * (py1 - py0), 0);
        const auto& list = tile_lists[tile];
        Eigen::VectorXd feat(d);
        for (int py = py0; py < py1; ++py) {
            for (int px = px0; px < px1; ++px) {
                double transmittance = 1.0;
                double acc_alpha = 0.0, acc_depth = 0.0;
                Eigen::Vector3d acc_rgb = Eigen::Vector3d::Zero();
                feat.setZero();
                uint32_t n = 0;
                for (uint32_t si : list) {
                    const auto& s = splats[si];
                    const double a = splat_alpha(s, px, py, cfg.cutoff_sigma);
                    if (a <= 0.0) continue;
                    const double wgt = a * transmittance;
                    acc_alpha += wgt;
                    if (want_feat) feat += wgt * features.row(s.index).transpose().cast<double>();
                    if (want_rgb) acc_rgb += wgt * frame.colors.row(s.index).transpose().cast<double>();
                    if (want_depth) acc_depth += wgt * s.depth;
                    res.gaussian.push_back(static_cast<uint32_t>(s.index));
                    res.weight.push_back(wgt);
                    ++n;
                    transmittance *= (1.0 - a);
                    if (transmittance < cfg.min_transmittance) break;
                }
                res.count[static_cast<size_t>(py - py0) * (px1 - px0) + (px - px0)] = n;
                const Eigen::Index p = static_cast<Eigen::Index>(py) * width + px;
                out.alpha[p] = static_cast<float>(acc_alpha);
                if (want_feat) out.features.row(p) = feat.transpose().cast<float>();
                if (want_rgb) out.rgb.row(p) = acc_rgb.transpose().cast<float>();
                if (want_depth) out.depth[p] = static_cast<float>(acc_depth);
            }
        }
    });

    // Gather tile-local contributor runs into pixel-major CSR.
    auto& ctx = out.contributors;
    ctx.offsets.assign(static_cast<size_t>(npix) + 1, 0);
    std::vector<uint32_t> tile_start(results.size(), 0);
    std::vector<std::pair<uint32_t, uint32_t>> pixel_src(static_cast<size_t>(npix));  // tile, offset in tile
    for (size_t tile = 0; tile < results.size(); ++tile) {
        const int tx = static_cast<int>(tile % tiles_x);
        const int ty = static_cast<int>(tile / tiles_x);
        const int px0 = tx * ts, py0 = ty * ts;
        const int px1 = std::min(width, px0 + ts), py1 = std::min(height, py0 + ts);
        uint32_t running = 0;
        size_t local = 0;
        for (int py = py0; py < py1; ++py)
            for (int px = px0; px < px1; ++px, ++local) {
                const size_t p = static_cast<size_t>(py) * width + px;
                pixel_src[p] = {static_cast<uint32_t>(tile), running};
                ctx.offsets[p + 1] = results[tile].count[local];
                running += results[tile].count[local];
            }
    }
    for (size_t p = 0; p < static_cast<size_t>(npix); ++p) ctx.offsets[p + 1] += ctx.offsets[p];
    ctx.gaussian.resize(ctx.offsets.back());
    ctx.weight.resize(ctx.offsets.back());
    for (size_t p = 0; p < static_cast<size_t>(npix); ++p) {
        const auto [tile, off] = pixel_src[p];
        const uint32_t n = ctx.offsets[p + 1] - ctx.offsets[p];
        std::copy_n(results[tile].gaussian.begin() + off, n, ctx.gaussian.begin() + ctx.offsets[p]);
        std::copy_n(results[tile].weight.begin() + off, n, ctx.weight.begin() + ctx.offsets[p]);
    }
    return out;
}

MatrixXfR render_backward(const RenderOutput& ctx, const MatrixXfR& grad_features) {
    const Eigen::Index npix = static_cast<Eigen::Index>(ctx.width) * ctx.height;
    if (grad_features.rows() != npix)
        throw Error("render_backward: gradient has " + std::to_string(grad_features.rows()) + " pixels, render has " +
                    std::to_string(npix));
    if (ctx.contributors.offsets.size() != static_cast<size_t>(npix) + 1)
        throw Error("render_backward: render context has no contributor lists");
    if (ctx.features.size() > 0 && grad_features.cols() != ctx.features.cols())
        throw Error("render_backward: gradient feature dim does not match render");
    return composite_backward(ctx.contributors, ctx.num_gaussians, grad_features);
}

} // namespace legs4
