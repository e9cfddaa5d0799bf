#include "legs4/highlights.hpp"

#include "legs4/image_io.hpp"
#include "legs4/parallel.hpp"
#include "legs4/raster.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>

namespace legs4 {

std::string effect_name(Effect e) {
    switch (e) {
    case Effect::Zoom: return "zoom";
    case Effect::BulletTime: return "bullet_time";
    case Effect::Desaturate: return "desaturate";
    }
    return "zoom";
}

Effect parse_effect(const std::string& name) {
    if (name == "zoom") return Effect::Zoom;
    if (name == "bullet_time" || name == "bullet-time") return Effect::BulletTime;
    if (name == "desaturate") return Effect::Desaturate;
    throw ValidationError("unknown effect '" + name + "' (zoom, bullet_time, desaturate)");
}

void HighlightSpec::validate() const {
    if (effect == Effect::Zoom && !(zoom_factor > 1)) throw ValidationError("zoom factor must be > 1");
    if (effect == Effect::BulletTime && frame_count < 1) throw ValidationError("bullet-time frame count must be >= 1");
    if (effect == Effect::Desaturate && !(strength > 0 && strength <= 1))
        throw ValidationError("desaturate strength must be in (0, 1]");
    if (width < 0 || height < 0) throw ValidationError("output size must be non-negative");
}

Eigen::Vector3d action_center(const Eigen::VectorXf& map, const Eigen::VectorXf& depth, const Camera& camera) {
    const Eigen::Index n = static_cast<Eigen::Index>(camera.width) * camera.height;
    if (map.size() != n || depth.size() != n) throw ValidationError("action_center: map size does not match the camera");
    double mass = 0, su = 0, sv = 0;
    for (Eigen::Index p = 0; p < n; ++p) {
        const double w = std::max(0.0f, map[p]);
        mass += w;
        su += w * static_cast<double>(p % camera.width);
        sv += w * static_cast<double>(p / camera.width);
    }
    if (!(mass > 0)) throw ValidationError("action_center: relevancy map has zero mass");
    const double u = su / mass, v = sv / mass;
    const int x = std::clamp(static_cast<int>(std::lround(u)), 0, camera.width - 1);
    const int y = std::clamp(static_cast<int>(std::lround(v)), 0, camera.height - 1);
    return camera.unproject(u, v, depth[static_cast<Eigen::Index>(y) * camera.width + x]);
}

Camera reaim(const Camera& camera, const Eigen::Vector3d& target) {
    const Eigen::Vector3d eye = camera.center();
    if ((target - eye).norm() < 1e-9) throw ValidationError("reaim: target coincides with the camera");
    const Eigen::Vector3d up = -camera.rotation().row(1).transpose();
    Camera out = camera;
    out.world_to_cam = look_at(eye, target, up);
    return out;
}

namespace {

MatrixXfR latents_for(const DynamicScene& scene, int t) { return rendered_latents(scene, t); }

} // namespace

ViewChoice choose_view(const DynamicScene& scene, const CodecParams* codec, const QueryEmbedding& q,
                       const CanonicalSet& c, const Segment& segment, const std::vector<Camera>& candidates,
                       const TileConfig& tile) {
    if (candidates.empty()) throw ValidationError("choose_view: no candidate cameras");
    if (segment.t_start < 0 || segment.t_end >= scene.T() || segment.t_end < segment.t_start)
        throw ValidationError("choose_view: segment outside the scene");
    std::vector<MatrixXfR> latents;
    for (int t = segment.t_start; t <= segment.t_end; ++t) latents.push_back(latents_for(scene, t));
    ViewChoice choice;
    choice.scores.assign(candidates.size(), 0.0);
    parallel_for(candidates.size(), [&](size_t i) {
        double sum = 0;
        for (int t = segment.t_start; t <= segment.t_end; ++t)
            sum += spatial_map(scene, t, latents[static_cast<size_t>(t - segment.t_start)], candidates[i], codec, q, c,
                               tile).scores.mean();
        choice.scores[i] = sum / segment.length();
    });
    size_t best = 0;
    for (size_t i = 1; i < candidates.size(); ++i)
        if (choice.scores[i] > choice.scores[best]) best = i;
    choice.source = candidates[best].id;
    const SpatialMap peak = spatial_map(scene, segment.peak,
                                        latents[static_cast<size_t>(segment.peak - segment.t_start)], candidates[best],
                                        codec, q, c, tile);
    choice.center = action_center(peak.scores, peak.depth, candidates[best]);
    choice.camera = reaim(candidates[best], choice.center);
    return choice;
}

std::vector<uint8_t> zoom_about(const std::vector<uint8_t>& rgb, int width, int height, double u, double v,
                                double factor) {
    std::vector<uint8_t> out(rgb.size());
    const double cx = width / 2.0, cy = height / 2.0;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double sx = u + (x - cx) / factor, sy = v + (y - cy) / factor;
            const double fx = std::clamp(sx, 0.0, width - 1.0), fy = std::clamp(sy, 0.0, height - 1.0);
            const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
            const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
            const double ax = fx - x0, ay = fy - y0;
            const bool inside = sx >= -0.5 && sx <= width - 0.5 && sy >= -0.5 && sy <= height - 0.5;
            for (int ch = 0; ch < 3; ++ch) {
                auto at = [&](int px, int py) { return static_cast<double>(rgb[(static_cast<size_t>(py) * width + px) * 3 + ch]); };
                const double val = (1 - ay) * ((1 - ax) * at(x0, y0) + ax * at(x1, y0)) +
                                   ay * ((1 - ax) * at(x0, y1) + ax * at(x1, y1));
                out[(static_cast<size_t>(y) * width + x) * 3 + ch] = inside ? static_cast<uint8_t>(std::lround(val)) : 0;
            }
        }
    return out;
}

std::vector<uint8_t> desaturate(const std::vector<uint8_t>& rgb, const Eigen::VectorXf& scores, double strength) {
    if (rgb.size() != static_cast<size_t>(scores.size()) * 3) throw ValidationError("desaturate: size mismatch");
    std::vector<uint8_t> out = rgb;
    for (Eigen::Index p = 0; p < scores.size(); ++p) {
        if (scores[p] >= 0.5f) continue;
        uint8_t* px = out.data() + p * 3;
        const double luma = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        for (int c = 0; c < 3; ++c)
            px[c] = static_cast<uint8_t>(std::lround((1 - strength) * px[c] + strength * luma));
    }
    return out;
}

namespace {

Camera resized(const Camera& cam, int width, int height) {
    if (width == 0 && height == 0) return cam;
    Camera out = cam;
    const double sx = static_cast<double>(width ? width : cam.width) / cam.width;
    const double sy = static_cast<double>(height ? height : cam.height) / cam.height;
    out.width = static_cast<int>(std::lround(cam.width * sx));
    out.height = static_cast<int>(std::lround(cam.height * sy));
    out.fx = static_cast<float>(cam.fx * sx);
    out.fy = static_cast<float>(cam.fy * sy);
    out.cx = static_cast<float>(cam.cx * sx);
    out.cy = static_cast<float>(cam.cy * sy);
    return out;
}

std::vector<uint8_t> render_rgb(const DynamicScene& scene, int t, const Camera& cam) {
    return to_rgb8(render(scene.frames[static_cast<size_t>(t)], cam, kRgb).rgb);
}

} // namespace

Highlight render_highlight(const DynamicScene& scene, const CodecParams* codec, const QueryEmbedding& q,
                           const CanonicalSet& c, const HighlightSpec& spec, const QueryOptions& options) {
    spec.validate();
    const Localization loc = localize(temporal_curve(scene, codec, q, c, options), options.dilation);
    if (!loc.primary) throw QueryNotFound();
    return render_highlight_segment(scene, codec, q, c, spec, *loc.primary, options);
}

Highlight render_highlight_segment(const DynamicScene& scene, const CodecParams* codec, const QueryEmbedding& q,
                                   const CanonicalSet& c, const HighlightSpec& spec, const Segment& segment,
                                   const QueryOptions& options) {
    spec.validate();
    Highlight h;
    h.spec = spec;
    h.segment = segment;
    h.view = choose_view(scene, codec, q, c, h.segment, scene.cameras, options.tile);
    const Camera base = resized(h.view.camera, spec.width, spec.height);

    std::vector<std::pair<int, Camera>> path;
    if (spec.effect == Effect::BulletTime) {
        const Eigen::Vector3d axis = -base.rotation().row(1).transpose();
        const Eigen::Vector3d offset = base.center() - h.view.center;
        for (int i = 0; i < spec.frame_count; ++i) {
            const double angle = spec.orbit_degrees * std::numbers::pi / 180.0 * i / spec.frame_count;
            const Eigen::Vector3d eye = h.view.center + Eigen::AngleAxisd(angle, axis) * offset;
            Camera cam = base;
            cam.world_to_cam = look_at(eye, h.view.center, axis);
            path.emplace_back(h.segment.peak, cam);
        }
    } else {
        for (int t = h.segment.t_start; t <= h.segment.t_end; ++t) path.emplace_back(t, base);
    }

    h.frames.resize(path.size());
    parallel_for(path.size(), [&](size_t i) {
        const auto& [t, cam] = path[i];
        HighlightFrame f{t, cam, cam.width, cam.height, render_rgb(scene, t, cam)};
        if (spec.effect != Effect::BulletTime) {
            const SpatialMap m = spatial_map(scene, t, cam, codec, q, c, options.tile);
            if (spec.effect == Effect::Desaturate) {
                f.rgb = desaturate(f.rgb, m.scores, spec.strength);
            } else {
                // follow the action: centre of this frame's map, else the peak centre
                Eigen::Vector3d center = h.view.center;
                if (m.scores.sum() > 0) center = action_center(m.scores, m.depth, cam);
                const Eigen::Vector3d pc = cam.to_camera(center);
                Eigen::Vector2d uv(cam.cx, cam.cy);
                if (pc.z() > 0) uv = cam.project_camera(pc);
                f.rgb = zoom_about(f.rgb, cam.width, cam.height, uv.x(), uv.y(), spec.zoom_factor);
            }
        }
        h.frames[i] = std::move(f);
    });
    return h;
}

void write_highlight(const std::filesystem::path& dir, const Highlight& h) {
    const auto out = dir / effect_name(h.spec.effect);
    nlohmann::json path = nlohmann::json::array();
    for (size_t i = 0; i < h.frames.size(); ++i) {
        const auto& f = h.frames[i];
        write_png(out / (std::to_string(i) + ".png"), f.width, f.height, f.rgb);
        std::vector<float> rows(16);
        for (int r = 0; r < 4; ++r)
            for (int cidx = 0; cidx < 4; ++cidx) rows[static_cast<size_t>(r * 4 + cidx)] = f.camera.world_to_cam(r, cidx);
        path.push_back({{"index", i}, {"t", f.t}, {"camera", {{"id", f.camera.id}, {"width", f.camera.width},
                        {"height", f.camera.height}, {"fx", f.camera.fx}, {"fy", f.camera.fy}, {"cx", f.camera.cx},
                        {"cy", f.camera.cy}, {"world_to_cam", rows}}}});
    }
    nlohmann::json j{{"effect", effect_name(h.spec.effect)},
                     {"segment", {h.segment.t_start, h.segment.t_end}},
                     {"peak", h.segment.peak},
                     {"source_camera", h.view.source},
                     {"action_center", {h.view.center.x(), h.view.center.y(), h.view.center.z()}},
                     {"frames", path}};
    std::ofstream f(out / "camera_path.json");
    if (!f) throw IoError("cannot write " + (out / "camera_path.json").string());
    f << j.dump(2) << '\n';
}

} // namespace legs4
