#include "legs4/synth.hpp"

#include "legs4/benchmark.hpp"
#include "legs4/error.hpp"
#include "legs4/image_io.hpp"
#include "legs4/raster.hpp"
#include "legs4/rng.hpp"
#include "legs4/tensor_io.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>

namespace legs4 {

namespace {

constexpr std::array<float, 3> kBodyColor{0.2f, 0.4f, 0.9f};
constexpr std::array<float, 3> kClusterColor{0.9f, 0.25f, 0.15f};
constexpr std::array<float, 3> kBackground{0.0f, 0.0f, 0.0f};

/// Gram-Schmidt on Gaussian draws; rows are orthonormal.
MatrixXfR orthonormal_rows(Rng& rng, int rows, int dim) {
    Eigen::MatrixXd basis(rows, dim);
    for (int r = 0; r < rows; ++r) {
        Eigen::VectorXd v(dim);
        double n = 0;
        do {
            for (int i = 0; i < dim; ++i) v[i] = rng.normal();
            for (int k = 0; k < r; ++k) v -= basis.row(k).dot(v) * basis.row(k).transpose();
            n = v.norm();
        } while (n < 1e-6);
        basis.row(r) = (v / n).transpose();
    }
    return basis.cast<float>();
}

Eigen::Vector4f random_quaternion(Rng& rng) {
    Eigen::Vector4d q;
    do {
        for (int i = 0; i < 4; ++i) q[i] = rng.normal();
    } while (q.norm() < 1e-6);
    return (q / q.norm()).cast<float>();
}

Eigen::Vector3d in_ball(Rng& rng) {
    Eigen::Vector3d p;
    do {
        p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    } while (p.squaredNorm() > 1.0);
    return p;
}

bool active(const std::pair<int, int>& interval, int t) { return t >= interval.first && t <= interval.second; }

} // namespace

void SynthSpec::validate() const {
    if (M <= 0) throw ValidationError("synth: M must be positive");
    if (T <= 0) throw ValidationError("synth: T must be positive");
    if (views <= 0) throw ValidationError("synth: views must be positive");
    if (width < 8 || height < 8) throw ValidationError("synth: image must be at least 8x8");
    if (concepts < 1 || concepts > 2) throw ValidationError("synth: concepts must be 1 or 2");
    if (D < concepts + 1 + canonical_count) throw ValidationError("synth: D too small for concepts, background and canonicals");
    if (concepts == 2 && (active_start < 0 || active_end < active_start || active_end >= T))
        throw ValidationError("synth: active interval must lie within [0, T)");
    if (!(cluster_fraction > 0 && cluster_fraction < 1)) throw ValidationError("synth: cluster_fraction must be in (0,1)");
    if (!(canonical_mix >= 0 && canonical_mix <= 1)) throw ValidationError("synth: canonical_mix must be in [0,1]");
}

int SyntheticGroundTruth::effective_concept(int gaussian, int t) const {
    const int c = concept_labels.at(static_cast<size_t>(gaussian));
    return c == 0 || active(active_intervals.at(static_cast<size_t>(c)), t) ? c : 0;
}

std::pair<DynamicScene, SyntheticGroundTruth> synth_scene(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed * 0x9E3779B97F4A7C15ULL + 0x5151);
    SyntheticGroundTruth gt;

    const MatrixXfR basis = orthonormal_rows(rng, spec.concepts + 1 + spec.canonical_count, spec.D);
    gt.concept_embeddings = basis.topRows(spec.concepts);
    gt.background_embedding = basis.row(spec.concepts).transpose();
    Eigen::VectorXf shared = Eigen::VectorXf::Zero(spec.D);
    for (int i = 0; i <= spec.concepts; ++i) shared += basis.row(i).transpose();
    shared.normalize();
    gt.canonical_vectors.resize(spec.canonical_count, spec.D);
    for (int k = 0; k < spec.canonical_count; ++k) {
        const Eigen::VectorXf r = basis.row(spec.concepts + 1 + k).transpose();
        const float mix = static_cast<float>(spec.canonical_mix);
        gt.canonical_vectors.row(k) = (mix * shared + std::sqrt(1.0f - mix * mix) * r).normalized().transpose();
    }
    gt.concept_colors = {kBodyColor, kClusterColor};
    gt.active_intervals.push_back({0, spec.T - 1});
    if (spec.concepts == 2) gt.active_intervals.push_back({spec.active_start, spec.active_end});

    const int n_cluster =
        spec.concepts == 2 ? std::clamp(static_cast<int>(std::lround(spec.M * spec.cluster_fraction)), 1, spec.M - 1) : 0;
    const int n_body = spec.M - n_cluster;
    gt.concept_labels.assign(static_cast<size_t>(spec.M), 0);

    // static attributes
    MatrixXfR rest(spec.M, 3), rotations(spec.M, 4), scales(spec.M, 3);
    Eigen::VectorXf opacities(spec.M);
    const Eigen::Vector3d body_center(0, 0, 0.55), body_radii(0.75, 0.75, 0.55);
    const Eigen::Vector3d cluster_center(0, 0, 1.1 + 0.5 * spec.cluster_radius);
    for (int i = 0; i < spec.M; ++i) {
        const bool cluster = i >= n_body;
        gt.concept_labels[static_cast<size_t>(i)] = cluster ? 1 : 0;
        const Eigen::Vector3d u = in_ball(rng);
        const Eigen::Vector3d p = cluster ? Eigen::Vector3d(cluster_center + spec.cluster_radius * u)
                                          : Eigen::Vector3d(body_center + body_radii.cwiseProduct(u));
        rest.row(i) = p.cast<float>().transpose();
        rotations.row(i) = random_quaternion(rng).transpose();
        for (int a = 0; a < 3; ++a)
            scales(i, a) = static_cast<float>(cluster ? rng.uniform(0.06, 0.1) : rng.uniform(0.09, 0.16));
        opacities[i] = static_cast<float>(rng.uniform(0.75, 0.95));
    }

    DynamicScene scene;
    scene.d = 0;
    scene.manifest.name = "synthetic";
    scene.manifest.provenance = "synthetic";
    scene.manifest.feature_provenance = "none";
    for (int v = 0; v < spec.views; ++v) {
        const double angle = 2.0 * std::numbers::pi * v / spec.views + 0.25;
        Camera cam;
        cam.id = std::to_string(v);
        cam.width = spec.width;
        cam.height = spec.height;
        cam.fx = cam.fy = static_cast<float>(spec.focal * std::min(spec.width, spec.height) / 64.0);
        cam.cx = spec.width / 2.0f;
        cam.cy = spec.height / 2.0f;
        const Eigen::Vector3d eye(spec.camera_distance * std::cos(angle), spec.camera_distance * std::sin(angle),
                                  spec.camera_height);
        cam.world_to_cam = look_at(eye, {0, 0, 0.9}, {0, 0, 1});
        scene.cameras.push_back(cam);
    }
    for (int t = 0; t < spec.T; ++t) {
        GaussianFrame f;
        f.t = t;
        f.means = rest;
        f.rotations = rotations;
        f.scales = scales;
        f.opacities = opacities;
        f.colors.resize(spec.M, 3);
        const bool on = spec.concepts == 2 && active(gt.active_intervals[1], t);
        const double lift =
            on ? spec.rise * (t - spec.active_start + 1) / static_cast<double>(spec.active_end - spec.active_start + 1) : 0.0;
        for (int i = 0; i < spec.M; ++i) {
            const bool moving = on && gt.concept_labels[static_cast<size_t>(i)] == 1;
            const auto& col = moving ? kClusterColor : kBodyColor;
            f.colors.row(i) << col[0], col[1], col[2];
            if (moving) f.means(i, 2) += static_cast<float>(lift);
        }
        scene.frames.push_back(std::move(f));
    }
    validate_scene(scene);

    for (const auto& cam : scene.cameras) {
        for (int t = 0; t < spec.T; ++t) {
            MatrixXfR onehot = MatrixXfR::Zero(spec.M, spec.concepts);
            for (int i = 0; i < spec.M; ++i) onehot(i, gt.effective_concept(i, t)) = 1.0f;
            const auto r = render_with_features(scene.frames[static_cast<size_t>(t)], cam, onehot, kFeatures);
            for (int c = 0; c < spec.concepts; ++c) {
                std::vector<uint8_t> mask(static_cast<size_t>(r.features.rows()));
                for (Eigen::Index p = 0; p < r.features.rows(); ++p) mask[static_cast<size_t>(p)] = r.features(p, c) >= 0.5f;
                gt.masks[{cam.id, t, c}] = std::move(mask);
            }
        }
    }
    return {std::move(scene), std::move(gt)};
}

SyntheticEmbedderConfig synthetic_embedder_config(const SynthSpec& spec, const SyntheticGroundTruth& gt) {
    SyntheticEmbedderConfig cfg;
    cfg.dim = spec.D;
    cfg.seed = spec.seed;
    auto vec = [](const Eigen::VectorXf& v) { return std::vector<float>(v.data(), v.data() + v.size()); };
    cfg.palette.push_back({kBodyColor, vec(gt.concept_embeddings.row(0).transpose())});
    if (gt.concept_embeddings.rows() > 1) cfg.palette.push_back({kClusterColor, vec(gt.concept_embeddings.row(1).transpose())});
    cfg.palette.push_back({kBackground, vec(gt.background_embedding)});
    cfg.noise_ref_side = spec.embedder_noise_ref_side;
    return cfg;
}

std::vector<Video> render_videos(const DynamicScene& scene) {
    std::vector<Video> out;
    for (const auto& cam : scene.cameras) {
        Video v;
        v.view = cam.id;
        v.frames = scene.T();
        v.width = cam.width;
        v.height = cam.height;
        v.rgb.reserve(static_cast<size_t>(v.frames) * v.width * v.height * 3);
        for (const auto& f : scene.frames) {
            const auto r = render(f, cam, kRgb);
            const auto bytes = to_rgb8(r.rgb);
            v.rgb.insert(v.rgb.end(), bytes.begin(), bytes.end());
        }
        out.push_back(std::move(v));
    }
    return out;
}

void write_synth_workspace(const std::filesystem::path& dir, const SynthSpec& spec) {
    const auto [scene, gt] = synth_scene(spec);
    save_scene(scene, dir / "scene");
    for (const auto& v : render_videos(scene)) write_video(dir / "videos" / ("view_" + v.view + ".4leg"), v);
    save_synthetic_embedder(synthetic_embedder_config(spec, gt), dir / "embedder.json");

    auto blob = [](const Eigen::VectorXf& v) {
        return Tensor::from_f32({static_cast<uint64_t>(v.size())}, std::vector<float>(v.data(), v.data() + v.size()));
    };
    nlohmann::json dict = nlohmann::json::object();
    auto add = [&](const std::string& phrase, const Eigen::VectorXf& v) {
        const std::string rel = "queries/" + slugify(phrase) + ".4leg";
        write_tensor(dir / rel, blob(v));
        dict[phrase] = rel;
    };
    const auto phrases = CanonicalSet::default_phrases();
    for (int k = 0; k < spec.canonical_count; ++k)
        add(k < static_cast<int>(phrases.size()) ? phrases[static_cast<size_t>(k)] : "canonical " + std::to_string(k),
            gt.canonical_vectors.row(k).transpose());
    add("body", gt.concept_embeddings.row(0).transpose());
    add("background", gt.background_embedding);
    if (spec.concepts == 2) add(kPlantedQuery, gt.concept_embeddings.row(1).transpose());
    {
        std::ofstream out(dir / "queries.json");
        if (!out) throw IoError("cannot write " + (dir / "queries.json").string());
        out << dict.dump(2) << '\n';
    }

    nlohmann::json truth;
    truth["concept_labels"] = gt.concept_labels;
    truth["active_intervals"] = gt.active_intervals;
    {
        std::ofstream out(dir / "ground_truth.json");
        out << truth.dump() << '\n';
    }

    if (spec.concepts == 2) {
        AnnotationSet ann;
        ann.scene = scene.manifest.name;
        ann.query = kPlantedQuery;
        ann.intervals = {{spec.active_start, spec.active_end}};
        ann.embedding = "embedding.4leg";
        for (const auto& cam : scene.cameras) {
            ViewAnnotation va;
            va.view = cam.id;
            va.width = cam.width;
            va.height = cam.height;
            for (int t = 0; t < spec.T; ++t) va.masks[t] = gt.masks.at({cam.id, t, 1});
            ann.views.push_back(std::move(va));
        }
        write_annotations(dir / "annotations", ann);
        write_tensor(dir / "annotations" / ann.scene / slugify(ann.query) / "embedding.4leg",
                     blob(gt.concept_embeddings.row(1).transpose()));
    }
}

} // namespace legs4
