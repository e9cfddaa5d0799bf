#include "legs4/metrics.hpp"

#include "legs4/error.hpp"

#include <algorithm>
#include <numeric>

namespace legs4 {

double box_iou(const BBox& a, const BBox& b) {
    const int ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
    const int ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
    if (ix1 < ix0 || iy1 < iy0) return 0.0;
    const double inter = static_cast<double>(ix1 - ix0 + 1) * (iy1 - iy0 + 1);
    return inter / (static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter);
}

std::optional<BBox> map_to_bbox(const Eigen::Ref<const Eigen::VectorXf>& map, int width, int height,
                                double threshold) {
    if (map.size() != static_cast<Eigen::Index>(width) * height) throw ValidationError("map_to_bbox: size mismatch");
    Eigen::Index best = -1;
    for (Eigen::Index p = 0; p < map.size(); ++p)
        if (map[p] > threshold && (best < 0 || map[p] > map[best])) best = p;
    if (best < 0) return std::nullopt;
    // flood fill the component containing the maximum
    std::vector<char> seen(static_cast<size_t>(map.size()), 0);
    std::vector<Eigen::Index> stack{best};
    seen[static_cast<size_t>(best)] = 1;
    BBox box{width, height, -1, -1};
    while (!stack.empty()) {
        const Eigen::Index p = stack.back();
        stack.pop_back();
        const int x = static_cast<int>(p % width), y = static_cast<int>(p / width);
        box.x0 = std::min(box.x0, x);
        box.y0 = std::min(box.y0, y);
        box.x1 = std::max(box.x1, x);
        box.y1 = std::max(box.y1, y);
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int nx = x + dx, ny = y + dy;
                if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
                const Eigen::Index q = static_cast<Eigen::Index>(ny) * width + nx;
                if (seen[static_cast<size_t>(q)] || !(map[q] > threshold)) continue;
                seen[static_cast<size_t>(q)] = 1;
                stack.push_back(q);
            }
    }
    return box;
}

std::optional<BBox> mask_bbox(const std::vector<uint8_t>& mask, int width, int height) {
    if (mask.size() != static_cast<size_t>(width) * height) throw ValidationError("mask_bbox: size mismatch");
    BBox box{width, height, -1, -1};
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (mask[static_cast<size_t>(y) * width + x]) {
                box.x0 = std::min(box.x0, x);
                box.y0 = std::min(box.y0, y);
                box.x1 = std::max(box.x1, x);
                box.y1 = std::max(box.y1, y);
            }
    if (box.x1 < 0) return std::nullopt;
    return box;
}

namespace {

size_t union_size(const std::set<int>& a, const std::set<int>& b) {
    std::set<int> u = a;
    u.insert(b.begin(), b.end());
    return u.size();
}

std::vector<int> intersection(const std::set<int>& a, const std::set<int>& b) {
    std::vector<int> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

} // namespace

double viou(const FrameBoxes& pred, const FrameBoxes& gt) {
    const size_t u = union_size(pred.frames, gt.frames);
    if (u == 0) return 0.0;
    double sum = 0.0;
    for (int t : intersection(pred.frames, gt.frames)) {
        const auto p = pred.boxes.find(t);
        const auto g = gt.boxes.find(t);
        if (p != pred.boxes.end() && g != gt.boxes.end()) sum += box_iou(p->second, g->second);
    }
    return sum / static_cast<double>(u);
}

double average_precision(const Eigen::Ref<const Eigen::VectorXf>& scores, const std::vector<uint8_t>& mask) {
    if (mask.size() != static_cast<size_t>(scores.size())) throw ValidationError("average_precision: dim mismatch");
    const long positives = std::count_if(mask.begin(), mask.end(), [](uint8_t m) { return m != 0; });
    if (positives == 0) return 0.0;
    std::vector<Eigen::Index> order(mask.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return scores[a] > scores[b]; });
    double ap = 0.0;
    long tp = 0, seen = 0;
    for (size_t i = 0; i < order.size();) {
        size_t j = i;
        long group_tp = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) group_tp += mask[static_cast<size_t>(order[j++])] != 0;
        tp += group_tp;
        seen += static_cast<long>(j - i);
        if (group_tp > 0) ap += (static_cast<double>(tp) / seen) * (static_cast<double>(group_tp) / positives);
        i = j;
    }
    return ap;
}

double vap(const std::set<int>& pred_frames, const std::map<int, Eigen::VectorXf>& pred_maps,
           const std::set<int>& gt_frames, const std::map<int, std::vector<uint8_t>>& gt_masks) {
    const size_t u = union_size(pred_frames, gt_frames);
    if (u == 0) return 0.0;
    double sum = 0.0;
    for (int t : intersection(pred_frames, gt_frames)) {
        const auto p = pred_maps.find(t);
        const auto g = gt_masks.find(t);
        if (p == pred_maps.end() || g == gt_masks.end())
            throw ValidationError("vap: missing map or mask for frame " + std::to_string(t));
        sum += average_precision(p->second, g->second);
    }
    return sum / static_cast<double>(u);
}

TemporalPRF temporal_prf(const std::set<int>& pred, const std::set<int>& gt) {
    if (pred.empty() && gt.empty()) return {1.0, 1.0, 1.0};
    const double inter = static_cast<double>(intersection(pred, gt).size());
    TemporalPRF r;
    r.tiou = inter / static_cast<double>(union_size(pred, gt));
    r.trec = gt.empty() ? 0.0 : inter / static_cast<double>(gt.size());
    r.tprec = pred.empty() ? 0.0 : inter / static_cast<double>(pred.size());
    return r;
}

} // namespace legs4
