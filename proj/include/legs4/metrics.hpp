#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace legs4 {

/// Inclusive pixel bounds.
struct BBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    long area() const { return static_cast<long>(x1 - x0 + 1) * (y1 - y0 + 1); }
    bool operator==(const BBox&) const = default;
};

double box_iou(const BBox& a, const BBox& b);

/// Binarises at `threshold` (strictly above), labels 8-connected components
/// and returns the tight box of the component holding the global maximum.
std::optional<BBox> map_to_bbox(const Eigen::Ref<const Eigen::VectorXf>& map, int width, int height,
                                double threshold = 0.5);

/// Tight box of the nonzero pixels of a binary mask.
std::optional<BBox> mask_bbox(const std::vector<uint8_t>& mask, int width, int height);

struct FrameBoxes {
    std::set<int> frames;
    std::map<int, BBox> boxes;  // frames without an entry count as IoU 0
};

/// Sum of per-frame IoU over the frame intersection, divided by the union size.
double viou(const FrameBoxes& pred, const FrameBoxes& gt);

/// Non-interpolated AP of ranking pixels by score against a binary mask;
/// equal scores form a single threshold step. 0 when the mask is empty.
double average_precision(const Eigen::Ref<const Eigen::VectorXf>& scores, const std::vector<uint8_t>& mask);

/// Sum of per-frame AP over the intersection of frame sets, divided by the union size.
double vap(const std::set<int>& pred_frames, const std::map<int, Eigen::VectorXf>& pred_maps,
           const std::set<int>& gt_frames, const std::map<int, std::vector<uint8_t>>& gt_masks);

struct TemporalPRF {
    double tiou = 0, trec = 0, tprec = 0;
};

TemporalPRF temporal_prf(const std::set<int>& pred, const std::set<int>& gt);

} // namespace legs4
