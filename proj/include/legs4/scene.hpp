#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace legs4 {

using MatrixXfR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixXdR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Calibrated pinhole camera. Camera space is x right, y down, z forward.
struct Camera {
    std::string id;
    int width = 0;
    int height = 0;
    float fx = 0, fy = 0, cx = 0, cy = 0;
    Eigen::Matrix4f world_to_cam = Eigen::Matrix4f::Identity();

    Eigen::Matrix3d rotation() const { return world_to_cam.block<3, 3>(0, 0).cast<double>(); }
    Eigen::Vector3d translation() const { return world_to_cam.block<3, 1>(0, 3).cast<double>(); }
    Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation() * world + translation(); }
    /// Camera position in world coordinates.
    Eigen::Vector3d center() const { return -rotation().transpose() * translation(); }
    /// Pixel coordinates of a camera-space point (z must be positive).
    Eigen::Vector2d project_camera(const Eigen::Vector3d& p) const {
        return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
    }
    Eigen::Vector2d project(const Eigen::Vector3d& world) const { return project_camera(to_camera(world)); }
    /// World point at pixel (u, v) and camera-space depth z.
    Eigen::Vector3d unproject(double u, double v, double z) const;

    bool operator==(const Camera&) const = default;
};

/// Rigid transform placing a camera at `eye` looking at `target`. `up` is a
/// world direction that maps to image-up (negative camera y).
Eigen::Matrix4f look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up);

/// Gaussians of a single timestep. Rotations are unit quaternions (w, x, y, z).
struct GaussianFrame {
    int t = 0;
    MatrixXfR means;      // M x 3
    MatrixXfR rotations;  // M x 4
    MatrixXfR scales;     // M x 3
    Eigen::VectorXf opacities;
    MatrixXfR colors;     // M x 3
    std::optional<MatrixXfR> latent_features;  // M x d once distilled

    Eigen::Index size() const { return means.rows(); }
    bool operator==(const GaussianFrame& other) const;
};

struct SceneManifest {
    std::string name = "scene";
    float fps = 30.0f;
    std::string provenance = "pretrained";          // "pretrained" | "synthetic"
    std::string feature_provenance = "none";
    /// Set once latents are distilled; queries must smooth features the same way.
    bool attention = true;
    int attention_k = 20;

    bool operator==(const SceneManifest&) const = default;
};

struct DynamicScene {
    std::vector<GaussianFrame> frames;
    std::vector<Camera> cameras;
    int d = 0;
    SceneManifest manifest;

    int T() const { return static_cast<int>(frames.size()); }
    Eigen::Index M() const { return frames.empty() ? 0 : frames.front().size(); }
    bool distilled() const;
    const Camera& camera(const std::string& id) const;
    bool operator==(const DynamicScene&) const = default;
};

void validate_camera(const Camera& camera);
void validate_frame(const GaussianFrame& frame, int d, const std::string& where);
/// Throws ValidationError naming the first violated invariant.
void validate_scene(const DynamicScene& scene);

DynamicScene load_scene(const std::filesystem::path& dir);
void save_scene(const DynamicScene& scene, const std::filesystem::path& dir);

} // namespace legs4
