#pragma once

#include "legs4/codec.hpp"
#include "legs4/error.hpp"
#include "legs4/query.hpp"
#include "legs4/scene.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace legs4 {

enum class Effect { Zoom, BulletTime, Desaturate };

std::string effect_name(Effect e);
Effect parse_effect(const std::string& name);

struct HighlightSpec {
    Effect effect = Effect::Zoom;
    double zoom_factor = 2.0;
    double orbit_degrees = 360.0;
    int frame_count = 12;
    double strength = 1.0;
    /// Output size; 0 keeps the camera's.
    int width = 0, height = 0;

    void validate() const;
};

class QueryNotFound : public Error {
public:
    QueryNotFound() : Error("query not found in scene") {}
};

/// Back-projects the score-weighted centroid of `map` at its rendered depth.
Eigen::Vector3d action_center(const Eigen::VectorXf& map, const Eigen::VectorXf& depth, const Camera& camera);

/// Same position and intrinsics, optical axis through `target`; the image
/// up direction is kept as close to the original as possible.
Camera reaim(const Camera& camera, const Eigen::Vector3d& target);

struct ViewChoice {
    Camera camera;           // re-aimed winner
    std::string source;      // id of the chosen candidate
    std::vector<double> scores;  // mean relevancy per candidate
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
};

ViewChoice choose_view(const DynamicScene& scene, const CodecParams* codec, const QueryEmbedding& q,
                       const CanonicalSet& c, const Segment& segment, const std::vector<Camera>& candidates,
                       const TileConfig& tile = {});

struct HighlightFrame {
    int t = 0;
    Camera camera;
    int width = 0, height = 0;
    std::vector<uint8_t> rgb;
};

struct Highlight {
    HighlightSpec spec;
    Segment segment;
    ViewChoice view;
    std::vector<HighlightFrame> frames;
};

/// Localises the query and renders the effect; throws QueryNotFound when
/// there is no temporal segment.
Highlight render_highlight(const DynamicScene& scene, const CodecParams* codec, const QueryEmbedding& q,
                           const CanonicalSet& c, const HighlightSpec& spec, const QueryOptions& options = {});

/// Renders the effect for an already localised segment.
Highlight render_highlight_segment(const DynamicScene& scene, const CodecParams* codec, const QueryEmbedding& q,
                                   const CanonicalSet& c, const HighlightSpec& spec, const Segment& segment,
                                   const QueryOptions& options = {});

/// Bilinear crop of `rgb` scaled by `factor` about (u, v), which lands on the output centre.
std::vector<uint8_t> zoom_about(const std::vector<uint8_t>& rgb, int width, int height, double u, double v,
                                double factor);

/// Pixels scoring below 0.5 move toward their Rec.601 luma by `strength`.
std::vector<uint8_t> desaturate(const std::vector<uint8_t>& rgb, const Eigen::VectorXf& scores, double strength);

/// Writes dir/<effect>/<index>.png and dir/<effect>/camera_path.json.
void write_highlight(const std::filesystem::path& dir, const Highlight& h);

} // namespace legs4
