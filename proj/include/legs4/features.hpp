#pragma once

#include "legs4/error.hpp"
#include "legs4/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace legs4 {

enum class Aggregation { Average, Concat, Single };

struct ScalePyramidConfig {
    std::vector<double> scales = {0.15, 0.2625, 0.375, 0.4875, 0.6};
    double stride_fraction = 0.5;
    int tube_length = 8;
    Aggregation aggregation = Aggregation::Average;
    int single_index = 0;  // used when aggregation == Single
    /// L2-normalize each interpolated per-scale feature before aggregation.
    bool normalize_per_scale = true;

    void validate() const;
    /// Feature width after aggregation for embedder dimension D.
    int output_dim(int embed_dim) const;
};

/// Sliding-window crop lattice for one scale. Crop (ix, iy) covers pixels
/// [origin_x[ix], origin_x[ix] + crop_px) x [origin_y[iy], origin_y[iy] + crop_px).
struct CropGrid {
    double scale = 0;
    int crop_px = 0;
    std::vector<int> origin_x, origin_y;
    std::vector<double> centers_x, centers_y;
    MatrixXfR features;  // (ny * nx) x D, row iy * nx + ix; empty until embedded

    size_t nx() const { return centers_x.size(); }
    size_t ny() const { return centers_y.size(); }
};

CropGrid plan_crops(int width, int height, double scale, double stride_fraction);

/// RGB video, frames x height x width x 3, row-major u8.
struct Video {
    std::string view;
    int frames = 0, height = 0, width = 0;
    std::vector<uint8_t> rgb;

    const uint8_t* pixel(int t, int x, int y) const {
        return rgb.data() + ((static_cast<size_t>(t) * height + y) * width + x) * 3;
    }
};

/// Stack of L equally sized crops, L x h x w x 3 u8 (the embedder wire payload).
struct Tube {
    int length = 0, height = 0, width = 0;
    std::vector<uint8_t> data;

    const uint8_t* pixel(int k, int x, int y) const {
        return data.data() + ((static_cast<size_t>(k) * height + y) * width + x) * 3;
    }
};

uint64_t tube_content_hash(const Tube& tube);

/// Video-text feature extractor applied to crop tubes.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual int dim() const = 0;
    /// Side length crops are resampled to before embedding; 0 keeps native size.
    virtual int input_side() const = 0;
    virtual std::vector<float> embed(const Tube& tube) = 0;
    virtual size_t max_concurrency() const { return 1; }
};

class EmbedderError : public Error {
public:
    using Error::Error;
};

/// Frames k in [t - L/2, t + L/2), clamped to the video.
std::vector<int> tube_frame_indices(int t, int tube_length, int video_frames);

Tube assemble_tube(const Video& video, int origin_x, int origin_y, int crop_px, int t, int tube_length,
                   int input_side);

/// Embeds the tube of crops centred at (center_x, center_y); returns a unit D-vector.
std::vector<float> embed_tube(Embedder& embedder, const Video& video, double center_x, double center_y, int crop_px,
                              int t, int tube_length);

/// Bilinear interpolation of the four crop features around pixel (x, y);
/// pixels outside the centre lattice clamp to its boundary.
Eigen::VectorXf pixel_feature_at_scale(const CropGrid& grid, double x, double y);

Eigen::VectorXf aggregate(const std::vector<Eigen::VectorXf>& per_scale, Aggregation mode, int single_index = 0);

struct FeatureMap {
    std::string view;
    int t = 0;
    int height = 0, width = 0;
    MatrixXfR data;  // (H*W) x channels
};

std::string feature_map_filename(const std::string& view, int t);
void write_feature_map(const std::filesystem::path& dir, const FeatureMap& map);
FeatureMap read_feature_map(const std::filesystem::path& dir, const std::string& view, int t);
/// Every feat_*.4leg in dir, ordered by view then t.
std::vector<FeatureMap> read_feature_maps(const std::filesystem::path& dir);
/// All pixel rows of all maps, stacked.
MatrixXfR stack_feature_rows(const std::vector<FeatureMap>& maps);

struct ExtractOptions {
    std::optional<std::filesystem::path> out_dir;
    /// Reuse maps already present in out_dir.
    bool resume = false;
};

/// Raised when the embedder fails mid-run; maps finished so far are on disk
/// and a rerun with resume=true continues from them.
class ExtractionInterrupted : public Error {
public:
    ExtractionInterrupted(const std::string& what, size_t completed) : Error(what), completed(completed) {}
    size_t completed;
};

/// Maps ordered view-major then by t.
std::vector<FeatureMap> extract_maps(const std::vector<Video>& videos, Embedder& embedder,
                                     const ScalePyramidConfig& config, const ExtractOptions& options = {});

} // namespace legs4
