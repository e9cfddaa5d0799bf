#pragma once

#include "legs4/raster.hpp"
#include "legs4/rng.hpp"
#include "legs4/scene.hpp"
#include "legs4/synth.hpp"

#include <Eigen/Geometry>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace legs4::testing {

inline Camera make_camera(int width, int height, double focal, std::string id = "cam0") {
    Camera c;
    c.id = std::move(id);
    c.width = width;
    c.height = height;
    c.fx = c.fy = static_cast<float>(focal);
    c.cx = width / 2.0f;
    c.cy = height / 2.0f;
    return c;
}

/// Random Gaussians in front of an identity camera, mostly inside its frustum.
inline GaussianFrame random_frame(Rng& rng, int m, int d, double spread = 0.8) {
    GaussianFrame f;
    f.means.resize(m, 3);
    f.rotations.resize(m, 4);
    f.scales.resize(m, 3);
    f.opacities.resize(m);
    f.colors.resize(m, 3);
    MatrixXfR lat(m, d);
    for (int i = 0; i < m; ++i) {
        f.means.row(i) << float(rng.uniform(-spread, spread)), float(rng.uniform(-spread, spread)),
            float(rng.uniform(2.0, 5.0));
        Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        q.normalize();
        f.rotations.row(i) = q.cast<float>().transpose();
        for (int k = 0; k < 3; ++k) f.scales(i, k) = float(rng.uniform(0.03, 0.25));
        f.opacities[i] = float(rng.uniform(0.05, 0.99));
        for (int k = 0; k < 3; ++k) f.colors(i, k) = float(rng.uniform());
        for (int k = 0; k < d; ++k) lat(i, k) = float(rng.uniform(-1.0, 1.0));
    }
    f.latent_features = lat;
    return f;
}

/// Per-pixel compositor with its own EWA projection: every splat is tested
/// against every pixel and the hits are fully sorted by (depth, index).
inline MatrixXdR brute_force_render(const GaussianFrame& frame, const Camera& cam, const MatrixXfR& features,
                                    Eigen::VectorXd* alpha_out = nullptr, const TileConfig& cfg = {}) {
    struct Proj {
        int index;
        double depth, opacity;
        Eigen::Vector2d mean;
        Eigen::Matrix2d inv;
    };
    std::vector<Proj> proj;
    const Eigen::Matrix3d rot = cam.world_to_cam.block<3, 3>(0, 0).cast<double>();
    const Eigen::Vector3d tr = cam.world_to_cam.block<3, 1>(0, 3).cast<double>();
    const double fx = cam.fx, fy = cam.fy;
    for (Eigen::Index i = 0; i < frame.size(); ++i) {
        const Eigen::Vector3d p = rot * frame.means.row(i).transpose().cast<double>() + tr;
        if (p.z() <= cfg.near_plane) continue;
        const Eigen::Vector4d qv = frame.rotations.row(i).transpose().cast<double>();
        const Eigen::Matrix3d r = Eigen::Quaterniond(qv[0], qv[1], qv[2], qv[3]).normalized().toRotationMatrix();
        Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
        for (int k = 0; k < 3; ++k) s(k, k) = frame.scales(i, k) * double(frame.scales(i, k));
        const Eigen::Matrix3d sigma = r * s * r.transpose();
        const double limx = 1.3 * 0.5 * cam.width / fx, limy = 1.3 * 0.5 * cam.height / fy;
        const double x = std::clamp(p.x() / p.z(), -limx, limx), y = std::clamp(p.y() / p.z(), -limy, limy);
        Eigen::Matrix<double, 2, 3> j;
        j << fx / p.z(), 0, -fx * x / p.z(), 0, fy / p.z(), -fy * y / p.z();
        Eigen::Matrix2d cov = (j * rot) * sigma * (j * rot).transpose();
        cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
        cov += cfg.eps_cov * Eigen::Matrix2d::Identity();
        if (!(cov.determinant() > 0)) continue;
        proj.push_back({int(i), p.z(), double(frame.opacities[i]),
                        {fx * p.x() / p.z() + cam.cx, fy * p.y() / p.z() + cam.cy}, cov.inverse()});
    }
    const Eigen::Index d = features.cols();
    MatrixXdR out = MatrixXdR::Zero(Eigen::Index(cam.width) * cam.height, d);
    if (alpha_out) *alpha_out = Eigen::VectorXd::Zero(out.rows());
    const double cut2 = cfg.cutoff_sigma * cfg.cutoff_sigma;
    for (int py = 0; py < cam.height; ++py)
        for (int px = 0; px < cam.width; ++px) {
            std::vector<std::pair<const Proj*, double>> hits;
            for (const auto& s : proj) {
                const Eigen::Vector2d dv = Eigen::Vector2d(px, py) - s.mean;
                const double m = dv.dot(s.inv * dv);
                if (m > cut2) continue;
                const double a = s.opacity * std::exp(-0.5 * m);
                if (a > 0) hits.push_back({&s, a});
            }
            std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
                return a.first->depth < b.first->depth ||
                       (a.first->depth == b.first->depth && a.first->index < b.first->index);
            });
            double trans = 1.0, acc = 0.0;
            const Eigen::Index pix = Eigen::Index(py) * cam.width + px;
            for (const auto& [s, a] : hits) {
                const double w = a * trans;
                out.row(pix) += w * features.row(s->index).cast<double>();
                acc += w;
                trans *= 1.0 - a;
                if (trans < cfg.min_transmittance) break;
            }
            if (alpha_out) (*alpha_out)[pix] = acc;
        }
    return out;
}

/// Small synthetic scene whose latents are set to the true concept
/// embeddings (so d = D and no codec is needed).
inline SynthSpec small_spec() {
    SynthSpec s;
    s.M = 160;
    s.T = 12;
    s.views = 3;
    s.width = s.height = 32;
    s.D = 16;
    s.active_start = 4;
    s.active_end = 7;
    s.seed = 3;
    return s;
}

inline std::pair<DynamicScene, SyntheticGroundTruth> oracle_scene(const SynthSpec& spec = small_spec()) {
    auto [scene, gt] = synth_scene(spec);
    // slight per-Gaussian jitter so relevant scores are not all tied with their mean
    Rng rng(spec.seed + 17);
    for (auto& f : scene.frames) {
        MatrixXfR lat(f.size(), spec.D);
        for (Eigen::Index i = 0; i < f.size(); ++i) {
            lat.row(i) = gt.concept_embeddings.row(gt.effective_concept(int(i), f.t));
            for (int j = 0; j < spec.D; ++j) lat(i, j) += float(0.02 * rng.normal());
            lat.row(i).normalize();
        }
        f.latent_features = lat;
    }
    scene.d = spec.D;
    scene.manifest.attention = false;
    return {std::move(scene), std::move(gt)};
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("legs4_" + tag + "_" + std::to_string(std::hash<std::string>{}(tag) ^ uint64_t(::getpid())));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

} // namespace legs4::testing
