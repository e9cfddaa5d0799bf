#pragma once

#include "legs4/codec.hpp"
#include "legs4/raster.hpp"
#include "legs4/scene.hpp"

#include <optional>
#include <string>
#include <vector>

namespace legs4 {

struct QueryEmbedding {
    std::string text;
    Eigen::VectorXf vector;  // unit length
};

/// Negative phrases anchoring the 0.5 decision level.
struct CanonicalSet {
    std::vector<std::string> phrases;
    MatrixXfR vectors;  // one unit row per phrase

    static std::vector<std::string> default_phrases() { return {"object", "things", "stuff", "texture"}; }
};

QueryEmbedding make_query(const Eigen::VectorXf& vector, std::string text = {});
CanonicalSet make_canonicals(std::vector<std::string> phrases, const MatrixXfR& vectors);

/// min_c exp(f.q) / (exp(f.q) + exp(f.c)) over unit vectors. When f is a
/// concatenation of several q-sized chunks, each chunk is normalised and
/// scored separately and the chunk scores are averaged.
double relevancy(const Eigen::Ref<const Eigen::VectorXf>& f, const QueryEmbedding& q, const CanonicalSet& c);

/// Scores every row of `features`.
Eigen::VectorXf relevancy_rows(const MatrixXfR& features, const QueryEmbedding& q, const CanonicalSet& c);

struct RelevancyVolume {
    MatrixXfR scores;  // M x T
    double rel_avg = 0;
    std::vector<long> counts;  // per t
    std::vector<double> s;     // per t, sums to 1 or is all zero
    double k = 0;              // localisation threshold 1/T

    int T() const { return static_cast<int>(s.size()); }
};

/// Derives rel_avg, counts and s from a score grid.
RelevancyVolume volume_from_scores(MatrixXfR scores);

struct QueryOptions {
    /// Score kNN-attention-smoothed latents instead of the raw per-Gaussian ones.
    bool smoothed_features = false;
    int dilation = 2;
    TileConfig tile;
};

/// Decodes per-Gaussian latents (codec may be null when latents are already
/// in query space) and scores them for every timestep.
RelevancyVolume temporal_curve(const DynamicScene& scene, const CodecParams* codec, const QueryEmbedding& q,
                               const CanonicalSet& c, const QueryOptions& options = {});

struct Segment {
    int t_start = 0;
    int t_end = 0;  // inclusive
    int peak = 0;

    int length() const { return t_end - t_start + 1; }
    bool operator==(const Segment&) const = default;
};

struct Localization {
    std::vector<Segment> segments;
    std::optional<Segment> primary;

    std::vector<int> frames() const;
};

/// Runs of s_t > 1/T after a radius-`dilation` dilation; the primary segment
/// is the longest (earliest on ties) and its peak the floor of its midpoint.
Localization localize(const std::vector<double>& s, int dilation = 2);
inline Localization localize(const RelevancyVolume& v, int dilation = 2) { return localize(v.s, dilation); }

struct SpatialMap {
    int width = 0, height = 0;
    Eigen::VectorXf scores;  // row-major H*W, 0 where alpha < 0.01
    Eigen::VectorXf alpha;
    Eigen::VectorXf depth;   // alpha-normalised
};

/// Per-Gaussian latents as rendered, i.e. attention-smoothed when the scene
/// was distilled with attention.
MatrixXfR rendered_latents(const DynamicScene& scene, int t);

SpatialMap spatial_map(const DynamicScene& scene, int t, const Camera& camera, const CodecParams* codec,
                       const QueryEmbedding& q, const CanonicalSet& c, const TileConfig& tile = {});

/// Same, reusing precomputed rendered_latents for the frame.
SpatialMap spatial_map(const DynamicScene& scene, int t, const MatrixXfR& latents, const Camera& camera,
                       const CodecParams* codec, const QueryEmbedding& q, const CanonicalSet& c,
                       const TileConfig& tile = {});

struct SceneSelection {
    int index = 0;
    std::vector<double> scores;
};

/// Ranks scenes by the max of s_t computed on timesteps 0, stride, 2*stride, ... and T-1.
SceneSelection select_scene(const std::vector<const DynamicScene*>& scenes, const std::vector<const CodecParams*>& codecs,
                            const QueryEmbedding& q, const CanonicalSet& c, int stride = 10,
                            const QueryOptions& options = {});

} // namespace legs4
