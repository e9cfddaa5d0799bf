#include "legs4/query.hpp"

#include "legs4/distill.hpp"
#include "legs4/error.hpp"
#include "legs4/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace legs4 {

namespace {

Eigen::VectorXf unit(const Eigen::VectorXf& v, const char* what) {
    const float n = v.norm();
    if (!(n > 0) || !std::isfinite(n)) throw ValidationError(std::string(what) + " must be a nonzero finite vector");
    return v / n;
}

} // namespace

QueryEmbedding make_query(const Eigen::VectorXf& vector, std::string text) {
    return {std::move(text), unit(vector, "query embedding")};
}

CanonicalSet make_canonicals(std::vector<std::string> phrases, const MatrixXfR& vectors) {
    if (vectors.rows() == 0) throw ValidationError("canonical set is empty");
    if (!phrases.empty() && phrases.size() != static_cast<size_t>(vectors.rows()))
        throw ValidationError("canonical phrases and vectors differ in count");
    CanonicalSet c;
    c.phrases = std::move(phrases);
    c.vectors.resize(vectors.rows(), vectors.cols());
    for (Eigen::Index i = 0; i < vectors.rows(); ++i)
        c.vectors.row(i) = unit(vectors.row(i).transpose(), "canonical embedding").transpose();
    return c;
}

double relevancy(const Eigen::Ref<const Eigen::VectorXf>& f, const QueryEmbedding& q, const CanonicalSet& c) {
    if (c.vectors.rows() == 0) throw ValidationError("canonical set is empty");
    const Eigen::Index D = q.vector.size();
    if (D == 0 || c.vectors.cols() != D) throw ValidationError("query and canonical dimensions differ");
    if (f.size() % D != 0) throw ValidationError("feature dimension is not a multiple of the query dimension");
    const Eigen::Index chunks = f.size() / D;
    double total = 0.0;
    for (Eigen::Index k = 0; k < chunks; ++k) {
        const auto seg = f.segment(k * D, D);
        const double n = seg.norm();
        if (!(n > 0)) {
            total += 0.5;  // zero feature: every dot product is 0
            continue;
        }
        const double fq = seg.dot(q.vector) / n;
        const double fc = (c.vectors * seg).maxCoeff() / n;
        // min over canonicals of the pairwise softmax is attained at the largest f.c
        total += 1.0 / (1.0 + std::exp(fc - fq));
    }
    return total / static_cast<double>(chunks);
}

Eigen::VectorXf relevancy_rows(const MatrixXfR& features, const QueryEmbedding& q, const CanonicalSet& c) {
    Eigen::VectorXf out(features.rows());
    for (Eigen::Index i = 0; i < features.rows(); ++i)
        out[i] = static_cast<float>(relevancy(features.row(i).transpose(), q, c));
    return out;
}

RelevancyVolume volume_from_scores(MatrixXfR scores) {
    RelevancyVolume v;
    const Eigen::Index T = scores.cols();
    v.k = T > 0 ? 1.0 / static_cast<double>(T) : 0.0;
    v.counts.assign(static_cast<size_t>(T), 0);
    v.s.assign(static_cast<size_t>(T), 0.0);
    double sum = 0.0;
    long n = 0;
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        if (scores.data()[i] > 0.5f) {
            sum += scores.data()[i];
            ++n;
        }
    }
    if (n > 0) {
        v.rel_avg = sum / static_cast<double>(n);
        long total = 0;
        for (Eigen::Index t = 0; t < T; ++t) {
            long c = 0;
            for (Eigen::Index g = 0; g < scores.rows(); ++g)
                if (scores(g, t) > v.rel_avg) ++c;
            v.counts[static_cast<size_t>(t)] = c;
            total += c;
        }
        if (total > 0)
            for (Eigen::Index t = 0; t < T; ++t)
                v.s[static_cast<size_t>(t)] = static_cast<double>(v.counts[static_cast<size_t>(t)]) / total;
    }
    v.scores = std::move(scores);
    return v;
}

namespace {

MatrixXfR score_frame(const DynamicScene& scene, int t, const CodecParams* codec, const QueryEmbedding& q,
                      const CanonicalSet& c, bool smoothed) {
    const auto& frame = scene.frames.at(static_cast<size_t>(t));
    if (!frame.latent_features) throw Error("missing latent features at t=" + std::to_string(t));
    MatrixXfR latents = *frame.latent_features;
    if (smoothed) latents = attend(latents, knn(frame.means, scene.manifest.attention_k));
    const MatrixXfR decoded = codec ? codec->decode(latents) : latents;
    return relevancy_rows(decoded, q, c);
}

MatrixXfR score_grid(const DynamicScene& scene, const std::vector<int>& times, const CodecParams* codec,
                     const QueryEmbedding& q, const CanonicalSet& c, bool smoothed) {
    MatrixXfR scores(scene.M(), static_cast<Eigen::Index>(times.size()));
    parallel_for(times.size(), [&](size_t i) {
        scores.col(static_cast<Eigen::Index>(i)) = score_frame(scene, times[i], codec, q, c, smoothed);
    });
    return scores;
}

} // namespace

RelevancyVolume temporal_curve(const DynamicScene& scene, const CodecParams* codec, const QueryEmbedding& q,
                               const CanonicalSet& c, const QueryOptions& options) {
    std::vector<int> times(static_cast<size_t>(scene.T()));
    for (int t = 0; t < scene.T(); ++t) times[static_cast<size_t>(t)] = t;
    return volume_from_scores(score_grid(scene, times, codec, q, c, options.smoothed_features));
}

std::vector<int> Localization::frames() const {
    std::vector<int> out;
    for (const auto& s : segments)
        for (int t = s.t_start; t <= s.t_end; ++t) out.push_back(t);
    return out;
}

Localization localize(const std::vector<double>& s, int dilation) {
    if (dilation < 0) throw ValidationError("dilation radius must be >= 0");
    const int T = static_cast<int>(s.size());
    Localization out;
    if (T == 0) return out;
    const double k = 1.0 / T;
    std::vector<char> b(static_cast<size_t>(T), 0), dil(static_cast<size_t>(T), 0);
    for (int t = 0; t < T; ++t) b[static_cast<size_t>(t)] = s[static_cast<size_t>(t)] > k;
    for (int t = 0; t < T; ++t) {
        if (!b[static_cast<size_t>(t)]) continue;
        for (int u = std::max(0, t - dilation); u <= std::min(T - 1, t + dilation); ++u) dil[static_cast<size_t>(u)] = 1;
    }
    for (int t = 0; t < T;) {
        if (!dil[static_cast<size_t>(t)]) {
            ++t;
            continue;
        }
        int e = t;
        while (e + 1 < T && dil[static_cast<size_t>(e + 1)]) ++e;
        out.segments.push_back({t, e, (t + e) / 2});
        if (!out.primary || out.segments.back().length() > out.primary->length()) out.primary = out.segments.back();
        t = e + 1;
    }
    return out;
}

MatrixXfR rendered_latents(const DynamicScene& scene, int t) {
    if (t < 0 || t >= scene.T()) throw ValidationError("timestep " + std::to_string(t) + " out of range");
    const auto& frame = scene.frames[static_cast<size_t>(t)];
    if (!frame.latent_features) throw Error("missing latent features at t=" + std::to_string(t));
    if (!scene.manifest.attention) return *frame.latent_features;
    return attend(*frame.latent_features, knn(frame.means, scene.manifest.attention_k));
}

SpatialMap spatial_map(const DynamicScene& scene, int t, const Camera& camera, const CodecParams* codec,
                       const QueryEmbedding& q, const CanonicalSet& c, const TileConfig& tile) {
    return spatial_map(scene, t, rendered_latents(scene, t), camera, codec, q, c, tile);
}

SpatialMap spatial_map(const DynamicScene& scene, int t, const MatrixXfR& latents, const Camera& camera,
                       const CodecParams* codec, const QueryEmbedding& q, const CanonicalSet& c,
                       const TileConfig& tile) {
    validate_camera(camera);
    if (t < 0 || t >= scene.T()) throw ValidationError("timestep " + std::to_string(t) + " out of range");
    const auto& frame = scene.frames[static_cast<size_t>(t)];
    const RenderOutput r = render_with_features(frame, camera, latents, kFeatures | kDepth, tile);
    SpatialMap out;
    out.width = r.width;
    out.height = r.height;
    out.alpha = r.alpha;
    out.depth = r.normalized_depth();
    out.scores = Eigen::VectorXf::Zero(r.alpha.size());
    std::vector<Eigen::Index> fg;
    for (Eigen::Index p = 0; p < r.alpha.size(); ++p)
        if (r.alpha[p] >= 0.01f) fg.push_back(p);
    if (fg.empty()) return out;
    MatrixXfR pix(static_cast<Eigen::Index>(fg.size()), r.features.cols());
    for (size_t i = 0; i < fg.size(); ++i) pix.row(static_cast<Eigen::Index>(i)) = r.features.row(fg[i]);
    const MatrixXfR decoded = codec ? codec->decode(pix) : pix;
    const Eigen::VectorXf s = relevancy_rows(decoded, q, c);
    for (size_t i = 0; i < fg.size(); ++i) out.scores[fg[i]] = s[static_cast<Eigen::Index>(i)];
    return out;
}

SceneSelection select_scene(const std::vector<const DynamicScene*>& scenes,
                            const std::vector<const CodecParams*>& codecs, const QueryEmbedding& q,
                            const CanonicalSet& c, int stride, const QueryOptions& options) {
    if (scenes.empty()) throw ValidationError("select_scene needs at least one scene");
    if (!codecs.empty() && codecs.size() != scenes.size()) throw ValidationError("one codec per scene required");
    if (stride < 1) throw ValidationError("stride must be >= 1");
    SceneSelection sel;
    for (size_t i = 0; i < scenes.size(); ++i) {
        const DynamicScene& scene = *scenes[i];
        std::vector<int> times;
        for (int t = 0; t < scene.T(); t += stride) times.push_back(t);
        if (times.empty() || times.back() != scene.T() - 1) times.push_back(scene.T() - 1);
        const auto v = volume_from_scores(
            score_grid(scene, times, codecs.empty() ? nullptr : codecs[i], q, c, options.smoothed_features));
        const double best = v.s.empty() ? 0.0 : *std::max_element(v.s.begin(), v.s.end());
        sel.scores.push_back(best);
        if (best > sel.scores[static_cast<size_t>(sel.index)]) sel.index = static_cast<int>(i);
    }
    return sel;
}

} // namespace legs4
