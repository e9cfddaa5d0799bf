#include "legs4/features.hpp"

#include "legs4/parallel.hpp"
#include "legs4/rng.hpp"
#include "legs4/tensor_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace legs4 {

namespace fs = std::filesystem;

void ScalePyramidConfig::validate() const {
    if (scales.empty()) throw Error("pyramid: at least one scale required");
    for (size_t i = 0; i < scales.size(); ++i) {
        if (!(scales[i] > 0.0 && scales[i] <= 1.0)) throw Error("pyramid: scales must lie in (0, 1]");
        if (i > 0 && scales[i] < scales[i - 1]) throw Error("pyramid: scales must be sorted ascending");
    }
    if (tube_length < 1) throw Error("pyramid: tube length must be >= 1");
    if (!(stride_fraction > 0.0 && stride_fraction <= 1.0)) throw Error("pyramid: stride_fraction must lie in (0, 1]");
    if (aggregation == Aggregation::Single && (single_index < 0 || single_index >= static_cast<int>(scales.size())))
        throw Error("pyramid: single scale index " + std::to_string(single_index) + " out of range");
}

int ScalePyramidConfig::output_dim(int embed_dim) const {
    return aggregation == Aggregation::Concat ? embed_dim * static_cast<int>(scales.size()) : embed_dim;
}

namespace {

std::vector<int> axis_origins(int extent, int crop, double step) {
    std::vector<int> origins;
    const int last = extent - crop;
    for (int i = 0;; ++i) {
        const int o = static_cast<int>(std::lround(i * step));
        if (o >= last) break;
        origins.push_back(o);
    }
    origins.push_back(last);
    return origins;
}

struct AxisWeight {
    size_t lo, hi;
    double frac;  // weight of hi
};

AxisWeight axis_weight(const std::vector<double>& centers, double x) {
    if (x <= centers.front()) return {0, 0, 0.0};
    if (x >= centers.back()) return {centers.size() - 1, centers.size() - 1, 0.0};
    const auto it = std::upper_bound(centers.begin(), centers.end(), x);
    const size_t hi = static_cast<size_t>(it - centers.begin());
    const size_t lo = hi - 1;
    return {lo, hi, (x - centers[lo]) / (centers[hi] - centers[lo])};
}

uint8_t sample_bilinear(const Video& video, int t, double x, double y, int c, int x0, int y0, int crop) {
    // Sample inside the crop window only; coordinates are crop-local.
    x = std::clamp(x, 0.0, crop - 1.0);
    y = std::clamp(y, 0.0, crop - 1.0);
    const int ix = static_cast<int>(std::floor(x));
    const int iy = static_cast<int>(std::floor(y));
    const int jx = std::min(ix + 1, crop - 1);
    const int jy = std::min(iy + 1, crop - 1);
    const double fx = x - ix, fy = y - iy;
    auto at = [&](int px, int py) { return static_cast<double>(video.pixel(t, x0 + px, y0 + py)[c]); };
    const double v = (1 - fx) * (1 - fy) * at(ix, iy) + fx * (1 - fy) * at(jx, iy) + (1 - fx) * fy * at(ix, jy) +
                     fx * fy * at(jx, jy);
    return static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

} // namespace

CropGrid plan_crops(int width, int height, double scale, double stride_fraction) {
    if (width <= 0 || height <= 0) throw Error("plan_crops: image dimensions must be positive");
    if (!(scale > 0.0 && scale <= 1.0)) throw Error("plan_crops: scale must lie in (0, 1]");
    if (!(stride_fraction > 0.0 && stride_fraction <= 1.0)) throw Error("plan_crops: stride_fraction must lie in (0, 1]");
    CropGrid grid;
    grid.scale = scale;
    grid.crop_px = static_cast<int>(std::lround(scale * std::min(width, height)));
    if (grid.crop_px < 8)
        throw Error("plan_crops: crop too small (crop_px=" + std::to_string(grid.crop_px) + " < 8)");
    const double step = stride_fraction * grid.crop_px;
    grid.origin_x = axis_origins(width, grid.crop_px, step);
    grid.origin_y = axis_origins(height, grid.crop_px, step);
    for (int o : grid.origin_x) grid.centers_x.push_back(o + grid.crop_px / 2.0);
    for (int o : grid.origin_y) grid.centers_y.push_back(o + grid.crop_px / 2.0);
    return grid;
}

uint64_t tube_content_hash(const Tube& tube) {
    const uint32_t dims[3] = {static_cast<uint32_t>(tube.length), static_cast<uint32_t>(tube.height),
                              static_cast<uint32_t>(tube.width)};
    uint64_t h = fnv1a64({reinterpret_cast<const uint8_t*>(dims), sizeof(dims)});
    return fnv1a64(tube.data, h);
}

std::vector<int> tube_frame_indices(int t, int tube_length, int video_frames) {
    std::vector<int> out;
    out.reserve(static_cast<size_t>(tube_length));
    const int start = t - tube_length / 2;
    for (int k = start; k < start + tube_length; ++k) out.push_back(std::clamp(k, 0, video_frames - 1));
    return out;
}

Tube assemble_tube(const Video& video, int origin_x, int origin_y, int crop_px, int t, int tube_length,
                   int input_side) {
    if (video.frames < 1) throw Error("assemble_tube: video has no frames");
    if (origin_x < 0 || origin_y < 0 || origin_x + crop_px > video.width || origin_y + crop_px > video.height)
        throw Error("assemble_tube: crop window outside the image");
    const int side = input_side > 0 ? input_side : crop_px;
    Tube tube;
    tube.length = tube_length;
    tube.height = tube.width = side;
    tube.data.resize(static_cast<size_t>(tube_length) * side * side * 3);
    const auto frames = tube_frame_indices(t, tube_length, video.frames);
    const double ratio = static_cast<double>(crop_px) / side;
    for (int k = 0; k < tube_length; ++k) {
        const int f = frames[k];
        for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) {
                uint8_t* dst = tube.data.data() + ((static_cast<size_t>(k) * side + y) * side + x) * 3;
                if (side == crop_px) {
                    const uint8_t* src = video.pixel(f, origin_x + x, origin_y + y);
                    std::copy_n(src, 3, dst);
                } else {
                    const double sx = (x + 0.5) * ratio - 0.5;
                    const double sy = (y + 0.5) * ratio - 0.5;
                    for (int c = 0; c < 3; ++c) dst[c] = sample_bilinear(video, f, sx, sy, c, origin_x, origin_y, crop_px);
                }
            }
        }
    }
    return tube;
}

std::vector<float> embed_tube(Embedder& embedder, const Video& video, double center_x, double center_y, int crop_px,
                              int t, int tube_length) {
    const int ox = static_cast<int>(std::lround(center_x - crop_px / 2.0));
    const int oy = static_cast<int>(std::lround(center_y - crop_px / 2.0));
    const Tube tube = assemble_tube(video, ox, oy, crop_px, t, tube_length, embedder.input_side());
    std::vector<float> v;
    try {
        v = embedder.embed(tube);
    } catch (const std::exception& e) {
        std::ostringstream os;
        os << "embedder failed for crop at (" << center_x << ", " << center_y << ") size " << crop_px << " t=" << t
           << " view " << video.view << ": " << e.what();
        throw EmbedderError(os.str());
    }
    if (static_cast<int>(v.size()) != embedder.dim())
        throw EmbedderError("embedder returned " + std::to_string(v.size()) + " values, expected " +
                            std::to_string(embedder.dim()));
    double norm = 0.0;
    for (float x : v) norm += static_cast<double>(x) * x;
    norm = std::sqrt(norm);
    if (!std::isfinite(norm)) throw EmbedderError("embedder returned non-finite values");
    if (norm > 0)
        for (auto& x : v) x = static_cast<float>(x / norm);
    return v;
}

Eigen::VectorXf pixel_feature_at_scale(const CropGrid& grid, double x, double y) {
    if (grid.centers_x.empty() || grid.centers_y.empty() || grid.features.rows() == 0)
        throw Error("pixel_feature_at_scale: empty crop grid");
    const auto wx = axis_weight(grid.centers_x, x);
    const auto wy = axis_weight(grid.centers_y, y);
    const size_t nx = grid.nx();
    auto row = [&](size_t iy, size_t ix) { return grid.features.row(static_cast<Eigen::Index>(iy * nx + ix)); };
    Eigen::VectorXf out = ((1 - wx.frac) * (1 - wy.frac)) * row(wy.lo, wx.lo).transpose();
    if (wx.frac > 0) out += (wx.frac * (1 - wy.frac)) * row(wy.lo, wx.hi).transpose();
    if (wy.frac > 0) out += ((1 - wx.frac) * wy.frac) * row(wy.hi, wx.lo).transpose();
    if (wx.frac > 0 && wy.frac > 0) out += (wx.frac * wy.frac) * row(wy.hi, wx.hi).transpose();
    return out;
}

Eigen::VectorXf aggregate(const std::vector<Eigen::VectorXf>& per_scale, Aggregation mode, int single_index) {
    if (per_scale.empty()) throw Error("aggregate: no scales");
    switch (mode) {
    case Aggregation::Average: {
        Eigen::VectorXf sum = Eigen::VectorXf::Zero(per_scale.front().size());
        for (const auto& v : per_scale) sum += v;
        return sum / static_cast<float>(per_scale.size());
    }
    case Aggregation::Concat: {
        const Eigen::Index d = per_scale.front().size();
        Eigen::VectorXf out(d * static_cast<Eigen::Index>(per_scale.size()));
        for (size_t s = 0; s < per_scale.size(); ++s) out.segment(static_cast<Eigen::Index>(s) * d, d) = per_scale[s];
        return out;
    }
    case Aggregation::Single:
        if (single_index < 0 || single_index >= static_cast<int>(per_scale.size()))
            throw Error("aggregate: single scale index " + std::to_string(single_index) + " out of range");
        return per_scale[static_cast<size_t>(single_index)];
    }
    throw Error("aggregate: unknown mode");
}

std::string feature_map_filename(const std::string& view, int t) {
    return "feat_" + view + "_" + std::to_string(t) + ".4leg";
}

std::vector<FeatureMap> read_feature_maps(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("missing file: " + dir.string());
    std::vector<std::pair<std::string, int>> keys;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("feat_", 0) != 0 || e.path().extension() != ".4leg") continue;
        const std::string stem = e.path().stem().string().substr(5);
        const auto us = stem.rfind('_');
        if (us == std::string::npos) continue;
        try {
            keys.emplace_back(stem.substr(0, us), std::stoi(stem.substr(us + 1)));
        } catch (const std::exception&) {
            continue;
        }
    }
    std::sort(keys.begin(), keys.end());
    std::vector<FeatureMap> maps;
    for (const auto& [view, t] : keys) maps.push_back(read_feature_map(dir, view, t));
    if (maps.empty()) throw IoError("no feature maps in " + dir.string());
    return maps;
}

MatrixXfR stack_feature_rows(const std::vector<FeatureMap>& maps) {
    Eigen::Index rows = 0;
    for (const auto& m : maps) rows += m.data.rows();
    MatrixXfR out(rows, maps.empty() ? 0 : maps.front().data.cols());
    Eigen::Index r = 0;
    for (const auto& m : maps) {
        if (m.data.cols() != out.cols()) throw ValidationError("feature maps differ in channel count");
        out.middleRows(r, m.data.rows()) = m.data;
        r += m.data.rows();
    }
    return out;
}

void write_feature_map(const fs::path& dir, const FeatureMap& map) {
    std::vector<float> data(map.data.data(), map.data.data() + map.data.size());
    write_tensor(dir / feature_map_filename(map.view, map.t),
                 Tensor::from_f32({static_cast<uint64_t>(map.height), static_cast<uint64_t>(map.width),
                                   static_cast<uint64_t>(map.data.cols())},
                                  std::move(data)));
}

FeatureMap read_feature_map(const fs::path& dir, const std::string& view, int t) {
    Tensor tensor = read_tensor(dir / feature_map_filename(view, t));
    if (tensor.dtype != DType::F32 || tensor.dims.size() != 3)
        throw ValidationError("feature map " + view + "/" + std::to_string(t) + ": expected H x W x C f32");
    FeatureMap map;
    map.view = view;
    map.t = t;
    map.height = static_cast<int>(tensor.dims[0]);
    map.width = static_cast<int>(tensor.dims[1]);
    const auto c = static_cast<Eigen::Index>(tensor.dims[2]);
    map.data = Eigen::Map<MatrixXfR>(tensor.f32.data(), static_cast<Eigen::Index>(map.height) * map.width, c);
    if (!map.data.allFinite()) throw ValidationError("feature map " + view + "/" + std::to_string(t) + ": not finite");
    return map;
}

namespace {

FeatureMap extract_one(const Video& video, int t, Embedder& embedder, const ScalePyramidConfig& config) {
    std::vector<size_t> active;
    if (config.aggregation == Aggregation::Single)
        active.push_back(static_cast<size_t>(config.single_index));
    else
        for (size_t s = 0; s < config.scales.size(); ++s) active.push_back(s);

    std::vector<CropGrid> grids;
    for (size_t s : active) {
        CropGrid grid = plan_crops(video.width, video.height, config.scales[s], config.stride_fraction);
        grid.features.resize(static_cast<Eigen::Index>(grid.nx() * grid.ny()), embedder.dim());
        parallel_for(
            grid.nx() * grid.ny(),
            [&](size_t i) {
                const size_t ix = i % grid.nx(), iy = i / grid.nx();
                const auto v = embed_tube(embedder, video, grid.centers_x[ix], grid.centers_y[iy], grid.crop_px, t,
                                          config.tube_length);
                grid.features.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXf>(v.data(), v.size());
            },
            std::max<size_t>(1, std::min(embedder.max_concurrency(), default_thread_count())));
        grids.push_back(std::move(grid));
    }

    const int out_dim = config.aggregation == Aggregation::Concat ? config.output_dim(embedder.dim()) : embedder.dim();
    FeatureMap map;
    map.view = video.view;
    map.t = t;
    map.height = video.height;
    map.width = video.width;
    map.data.resize(static_cast<Eigen::Index>(video.height) * video.width, out_dim);
    std::vector<Eigen::VectorXf> per_scale(grids.size());
    for (int y = 0; y < video.height; ++y) {
        for (int x = 0; x < video.width; ++x) {
            for (size_t g = 0; g < grids.size(); ++g) {
                per_scale[g] = pixel_feature_at_scale(grids[g], x, y);
                if (config.normalize_per_scale) {
                    const float n = per_scale[g].norm();
                    if (n > 0) per_scale[g] /= n;
                }
            }
            const Eigen::VectorXf f = config.aggregation == Aggregation::Single
                                          ? per_scale.front()
                                          : aggregate(per_scale, config.aggregation);
            map.data.row(static_cast<Eigen::Index>(y) * video.width + x) = f.transpose();
        }
    }
    return map;
}

void write_progress(const fs::path& dir, size_t completed, size_t total, const std::string& error) {
    nlohmann::json j{{"resumable", true}, {"completed", completed}, {"total", total}, {"error", error}};
    std::ofstream(dir / "extract_progress.json", std::ios::trunc) << j.dump(2) << '\n';
}

} // namespace

std::vector<FeatureMap> extract_maps(const std::vector<Video>& videos, Embedder& embedder,
                                     const ScalePyramidConfig& config, const ExtractOptions& options) {
    config.validate();
    if (videos.empty()) throw Error("extract_maps: no videos");
    const int frames = videos.front().frames;
    for (const auto& v : videos)
        if (v.frames != frames) throw Error("extract_maps: all views must share the same frame count");
    if (options.out_dir) fs::create_directories(*options.out_dir);

    std::vector<FeatureMap> maps;
    const size_t total = videos.size() * static_cast<size_t>(frames);
    maps.reserve(total);
    for (const auto& video : videos) {
        for (int t = 0; t < frames; ++t) {
            if (options.out_dir && options.resume && fs::exists(*options.out_dir / feature_map_filename(video.view, t))) {
                maps.push_back(read_feature_map(*options.out_dir, video.view, t));
                continue;
            }
            try {
                maps.push_back(extract_one(video, t, embedder, config));
            } catch (const EmbedderError& e) {
                if (options.out_dir) write_progress(*options.out_dir, maps.size(), total, e.what());
                throw ExtractionInterrupted(std::string("extraction interrupted (resumable): ") + e.what(), maps.size());
            }
            if (options.out_dir) write_feature_map(*options.out_dir, maps.back());
        }
    }
    if (options.out_dir) {
        std::error_code ec;
        fs::remove(*options.out_dir / "extract_progress.json", ec);
    }
    return maps;
}

} // namespace legs4
