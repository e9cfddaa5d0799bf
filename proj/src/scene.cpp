#include "legs4/scene.hpp"

#include "legs4/error.hpp"
#include "legs4/tensor_io.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace legs4 {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kUnitTol = 1e-5;

std::string row_label(const std::string& where, const char* field, Eigen::Index row) {
    std::ostringstream os;
    os << where << ": " << field << " row " << row;
    return os.str();
}

bool all_finite(const MatrixXfR& m) { return m.allFinite(); }

MatrixXfR to_matrix(std::vector<float> data, Eigen::Index rows, Eigen::Index cols) {
    MatrixXfR m(rows, cols);
    std::copy(data.begin(), data.end(), m.data());
    return m;
}

Tensor matrix_tensor(const MatrixXfR& m) {
    std::vector<float> data(m.data(), m.data() + m.size());
    return Tensor::from_f32({static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())}, std::move(data));
}

std::string frame_blob(int t, const char* field) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "frames/t%04d_%s.4leg", t, field);
    return buf;
}

} // namespace

Eigen::Vector3d Camera::unproject(double u, double v, double z) const {
    const Eigen::Vector3d p_cam((u - cx) * z / fx, (v - cy) * z / fy, z);
    return rotation().transpose() * (p_cam - translation());
}

Eigen::Matrix4f look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    Eigen::Vector3d right = forward.cross(up);
    if (right.norm() < 1e-9) {
        // up parallel to the viewing direction: pick any perpendicular axis
        right = forward.unitOrthogonal();
    }
    right.normalize();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = r;
    m.block<3, 1>(0, 3) = -r * eye;
    return m.cast<float>();
}

bool GaussianFrame::operator==(const GaussianFrame& o) const {
    return t == o.t && means == o.means && rotations == o.rotations && scales == o.scales &&
           opacities == o.opacities && colors == o.colors && latent_features == o.latent_features;
}

bool DynamicScene::distilled() const {
    if (frames.empty()) return false;
    for (const auto& f : frames)
        if (!f.latent_features) return false;
    return true;
}

const Camera& DynamicScene::camera(const std::string& id) const {
    for (const auto& c : cameras)
        if (c.id == id) return c;
    throw Error("unknown camera: " + id);
}

void validate_camera(const Camera& c) {
    const std::string where = "camera " + c.id;
    if (c.width <= 0 || c.height <= 0) throw ValidationError(where + ": width/height must be positive");
    if (!(c.fx > 0) || !(c.fy > 0)) throw ValidationError(where + ": fx/fy must be positive");
    if (!(c.cx >= 0 && c.cx < c.width)) throw ValidationError(where + ": cx outside [0, width)");
    if (!(c.cy >= 0 && c.cy < c.height)) throw ValidationError(where + ": cy outside [0, height)");
    if (!c.world_to_cam.allFinite()) throw ValidationError(where + ": world_to_cam not finite");
    const Eigen::Matrix3d r = c.rotation();
    if (((r * r.transpose()) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > kUnitTol)
        throw ValidationError(where + ": world_to_cam rotation not orthonormal");
    if (std::abs(r.determinant() - 1.0) > 1e-4) throw ValidationError(where + ": world_to_cam rotation not proper");
    const Eigen::RowVector4f last = c.world_to_cam.row(3);
    if (last != Eigen::RowVector4f(0, 0, 0, 1)) throw ValidationError(where + ": world_to_cam last row must be 0 0 0 1");
}

void validate_frame(const GaussianFrame& f, int d, const std::string& where) {
    const Eigen::Index m = f.means.rows();
    if (f.means.cols() != 3) throw ValidationError(where + ": means must be M x 3");
    if (f.rotations.rows() != m || f.rotations.cols() != 4)
        throw ValidationError(where + ": rotations dimension mismatch");
    if (f.scales.rows() != m || f.scales.cols() != 3) throw ValidationError(where + ": scales dimension mismatch");
    if (f.opacities.size() != m) throw ValidationError(where + ": opacities dimension mismatch");
    if (f.colors.rows() != m || f.colors.cols() != 3) throw ValidationError(where + ": colors dimension mismatch");
    if (!all_finite(f.means)) throw ValidationError(where + ": means not finite");
    for (Eigen::Index i = 0; i < m; ++i) {
        const double n = f.rotations.row(i).cast<double>().norm();
        if (!std::isfinite(n) || std::abs(n - 1.0) > kUnitTol)
            throw ValidationError(row_label(where, "rotations", i) + ": rotation not unit");
        for (int k = 0; k < 3; ++k)
            if (!(f.scales(i, k) > 0) || !std::isfinite(f.scales(i, k)))
                throw ValidationError(row_label(where, "scales", i) + ": scale not positive");
        if (!(f.opacities[i] >= 0 && f.opacities[i] <= 1))
            throw ValidationError(row_label(where, "opacities", i) + ": opacity outside [0,1]");
        for (int k = 0; k < 3; ++k)
            if (!(f.colors(i, k) >= 0 && f.colors(i, k) <= 1))
                throw ValidationError(row_label(where, "colors", i) + ": color outside [0,1]");
    }
    if (f.latent_features) {
        if (f.latent_features->rows() != m || f.latent_features->cols() != d)
            throw ValidationError(where + ": latent_features dimension mismatch");
        if (!all_finite(*f.latent_features)) throw ValidationError(where + ": latent_features not finite");
    }
}

void validate_scene(const DynamicScene& scene) {
    if (scene.frames.empty()) throw ValidationError("scene: T must be >= 1");
    if (scene.cameras.empty()) throw ValidationError("scene: at least one camera required");
    if (scene.d < 0) throw ValidationError("scene: d must be non-negative");
    for (const auto& c : scene.cameras) validate_camera(c);
    const Eigen::Index m = scene.frames.front().size();
    for (size_t t = 0; t < scene.frames.size(); ++t) {
        const auto& f = scene.frames[t];
        const std::string where = "frame " + std::to_string(t);
        if (f.t != static_cast<int>(t)) throw ValidationError(where + ": timestep index mismatch");
        if (f.size() != m) throw ValidationError(where + ": Gaussian count differs from frame 0");
        validate_frame(f, scene.d, where);
    }
}

void save_scene(const DynamicScene& scene, const fs::path& dir) {
    validate_scene(scene);
    std::error_code ec;
    fs::create_directories(dir / "frames", ec);
    if (ec) throw IoError("cannot create " + (dir / "frames").string() + ": " + ec.message());

    json manifest;
    manifest["format"] = "4leg-scene";
    manifest["version"] = 1;
    manifest["name"] = scene.manifest.name;
    manifest["fps"] = scene.manifest.fps;
    manifest["provenance"] = scene.manifest.provenance;
    manifest["feature_provenance"] = scene.manifest.feature_provenance;
    manifest["distill"] = {{"attention", scene.manifest.attention}, {"k", scene.manifest.attention_k}};
    manifest["T"] = scene.T();
    manifest["M"] = scene.M();
    manifest["d"] = scene.d;
    json cams = json::array();
    for (const auto& c : scene.cameras) {
        std::vector<float> w2c(16);
        for (int r = 0; r < 4; ++r)
            for (int k = 0; k < 4; ++k) w2c[r * 4 + k] = c.world_to_cam(r, k);
        cams.push_back({{"id", c.id},
                        {"width", c.width},
                        {"height", c.height},
                        {"fx", c.fx},
                        {"fy", c.fy},
                        {"cx", c.cx},
                        {"cy", c.cy},
                        {"world_to_cam", w2c}});
    }
    manifest["cameras"] = cams;
    json frames = json::array();
    for (const auto& f : scene.frames) {
        json entry;
        entry["t"] = f.t;
        auto put = [&](const char* field, const MatrixXfR& m) {
            const std::string rel = frame_blob(f.t, field);
            write_tensor(dir / rel, matrix_tensor(m));
            entry[field] = rel;
        };
        put("means", f.means);
        put("rotations", f.rotations);
        put("scales", f.scales);
        {
            const std::string rel = frame_blob(f.t, "opacities");
            write_tensor(dir / rel, Tensor::from_f32({static_cast<uint64_t>(f.opacities.size())},
                                                     {f.opacities.data(), f.opacities.data() + f.opacities.size()}));
            entry["opacities"] = rel;
        }
        put("colors", f.colors);
        if (f.latent_features)
            put("latent_features", *f.latent_features);
        else
            entry["latent_features"] = nullptr;
        frames.push_back(entry);
    }
    manifest["frames"] = frames;
    std::ofstream out(dir / "scene.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "scene.json").string());
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + (dir / "scene.json").string());
}

DynamicScene load_scene(const fs::path& dir) {
    const fs::path manifest_path = dir / "scene.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("missing file: " + manifest_path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError(manifest_path.string() + ": " + e.what());
    }
    try {
        DynamicScene scene;
        scene.manifest.name = j.value("name", "scene");
        scene.manifest.fps = j.value("fps", 30.0f);
        scene.manifest.provenance = j.value("provenance", "pretrained");
        scene.manifest.feature_provenance = j.value("feature_provenance", "none");
        if (j.contains("distill")) {
            scene.manifest.attention = j["distill"].value("attention", true);
            scene.manifest.attention_k = j["distill"].value("k", 20);
        }
        const int T = j.at("T").get<int>();
        const auto M = j.at("M").get<Eigen::Index>();
        scene.d = j.at("d").get<int>();
        for (const auto& c : j.at("cameras")) {
            Camera cam;
            cam.id = c.at("id").get<std::string>();
            cam.width = c.at("width").get<int>();
            cam.height = c.at("height").get<int>();
            cam.fx = c.at("fx").get<float>();
            cam.fy = c.at("fy").get<float>();
            cam.cx = c.at("cx").get<float>();
            cam.cy = c.at("cy").get<float>();
            const auto w2c = c.at("world_to_cam").get<std::vector<float>>();
            if (w2c.size() != 16) throw ValidationError("camera " + cam.id + ": world_to_cam needs 16 values");
            for (int r = 0; r < 4; ++r)
                for (int k = 0; k < 4; ++k) cam.world_to_cam(r, k) = w2c[r * 4 + k];
            scene.cameras.push_back(std::move(cam));
        }
        const auto& frames = j.at("frames");
        if (static_cast<int>(frames.size()) != T)
            throw ValidationError("frame count mismatch: manifest declares T=" + std::to_string(T) + " but lists " +
                                  std::to_string(frames.size()) + " frames");
        const auto um = static_cast<uint64_t>(M);
        for (int t = 0; t < T; ++t) {
            const auto& e = frames[t];
            GaussianFrame f;
            f.t = e.value("t", t);
            const std::string where = "frame " + std::to_string(t);
            auto blob = [&](const char* field) { return dir / e.at(field).get<std::string>(); };
            f.means = to_matrix(read_f32(blob("means"), {um, 3}, where + " means"), M, 3);
            f.rotations = to_matrix(read_f32(blob("rotations"), {um, 4}, where + " rotations"), M, 4);
            f.scales = to_matrix(read_f32(blob("scales"), {um, 3}, where + " scales"), M, 3);
            auto op = read_f32(blob("opacities"), {um}, where + " opacities");
            f.opacities = Eigen::Map<Eigen::VectorXf>(op.data(), M);
            f.colors = to_matrix(read_f32(blob("colors"), {um, 3}, where + " colors"), M, 3);
            if (e.contains("latent_features") && !e["latent_features"].is_null()) {
                const auto ud = static_cast<uint64_t>(scene.d);
                f.latent_features = to_matrix(read_f32(blob("latent_features"), {um, ud}, where + " latent_features"),
                                              M, scene.d);
            }
            scene.frames.push_back(std::move(f));
        }
        validate_scene(scene);
        return scene;
    } catch (const json::exception& e) {
        throw ValidationError(manifest_path.string() + ": malformed manifest: " + e.what());
    }
}

} // namespace legs4
