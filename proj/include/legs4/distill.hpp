#pragma once

#include "legs4/codec.hpp"
#include "legs4/features.hpp"
#include "legs4/raster.hpp"
#include "legs4/rng.hpp"
#include "legs4/scene.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace legs4 {

/// k nearest Gaussians (by mean position) per Gaussian, self first.
struct NeighborGraph {
    int k = 0;  // list length actually stored, min(k_requested, M)
    std::vector<int> indices;  // M x k row-major

    Eigen::Index size() const { return k == 0 ? 0 : static_cast<Eigen::Index>(indices.size()) / k; }
    const int* row(Eigen::Index i) const { return indices.data() + i * k; }
};

/// Exact kNN; equal distances are ordered by index.
NeighborGraph knn(const MatrixXfR& means, int k);

/// Parameter-free single-head attention of each Gaussian over its
/// neighbourhood: softmax_j(L_i . L_j / sqrt(d)) weighted sum of L_j.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> attend(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& features,
    const NeighborGraph& graph);

/// Gradient of attend with respect to its input features.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> attend_backward(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& features,
    const NeighborGraph& graph,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& grad_out);

enum class FeatureInit { Zeros, Gaussian };

struct DistillConfig {
    int k = 20;
    int iterations = 2000;
    double lr = 7e-4;
    bool attention = true;
    FeatureInit init = FeatureInit::Gaussian;
    double init_sigma = 0.01;
    uint64_t seed = 0;
    TileConfig tile;
    /// Views larger than full_frame_limit pixels are supervised on random
    /// pixel_subset-sized samples each iteration.
    int full_frame_limit = 128 * 128;
    int pixel_subset = 4096;

    void validate() const;
};

/// The per-timestep objective: sum over views and pixels of the L1 distance
/// between rendered (optionally attention-smoothed) features and targets.
/// Render weights are computed once since geometry is fixed.
class DistillProblem {
public:
    DistillProblem(const GaussianFrame& frame, const std::vector<Camera>& cameras,
                   const std::vector<const FeatureMap*>& targets, const DistillConfig& cfg);

    /// Loss at `features`; writes d(loss)/d(features) to grad when non-null.
    /// With a pixel-subset rng, only sampled pixels are supervised.
    double loss_and_grad(const MatrixXdR& features, MatrixXdR* grad, Rng* subset_rng = nullptr) const;

    Eigen::Index num_gaussians() const { return m_; }
    int dim() const { return d_; }
    const NeighborGraph& graph() const { return graph_; }
    /// Summed compositing weight of each Gaussian over all views.
    Eigen::VectorXd visibility() const;
    bool uses_subsets() const { return subsets_; }

private:
    struct View {
        Contributors ctx;
        MatrixXdR target;
        // CSR restricted to pixels with at least one contributor
        std::vector<uint32_t> row_offsets;
        std::vector<uint32_t> cols;
        std::vector<double> vals;
        MatrixXdR covered_target;
        double empty_loss = 0;  // loss of uncovered pixels, constant in the features
    };
    template <int D, typename ViewT>
    static double l1_pass(const ViewT& v, const MatrixXdR& smoothed, MatrixXdR* grad, int d);

    Eigen::Index m_ = 0;
    int d_ = 0;
    bool attention_ = true;
    bool subsets_ = false;
    int subset_size_ = 0;
    NeighborGraph graph_;
    std::vector<View> views_;
};

struct DistillResult {
    MatrixXfR latent;  // M x d
    std::vector<double> loss_trace;  // one entry per iteration, plus the final loss
};

/// Optimises the latent features of timestep t against targets (one
/// d-channel map per scene camera, matched by view id).
DistillResult distill_timestep(const DynamicScene& scene, int t, const std::vector<FeatureMap>& targets,
                               const DistillConfig& cfg);

struct DistillReport {
    DynamicScene scene;  // copy of the input with latents for every successful timestep
    std::map<int, std::string> failures;
    std::map<int, std::vector<double>> loss_traces;
};

/// Encodes raw maps with `codec` (if given; otherwise maps must already be
/// d-dimensional) and distills every timestep independently.
DistillReport distill_scene(const DynamicScene& scene, const std::vector<FeatureMap>& maps, const CodecParams* codec,
                            const DistillConfig& cfg);

void write_loss_trace(const std::filesystem::path& path, const std::vector<double>& trace);

} // namespace legs4
