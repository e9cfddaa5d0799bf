#pragma once

#include "legs4/embedders.hpp"
#include "legs4/features.hpp"
#include "legs4/scene.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace legs4 {

/// A static "body" (concept 0) with a cluster (concept 1) resting on top.
/// Inside the cluster's interval it changes colour and rises; outside it
/// looks like part of the body.
struct SynthSpec {
    int M = 300;
    int T = 30;
    int views = 4;
    int width = 64, height = 64;
    int D = 32;
    int concepts = 2;
    int active_start = 10, active_end = 19;  // inclusive interval of concept 1
    double cluster_fraction = 0.2;
    double cluster_radius = 0.32;
    double rise = 0.35;          // height gained over the active interval
    double camera_distance = 4.0;
    double camera_height = 1.4;
    double focal = 96.0;
    int canonical_count = 4;
    double canonical_mix = 0.5;  // weight of the shared palette direction in canonical vectors
    /// Small-crop term of the matching synthetic embedder (see SyntheticEmbedderConfig).
    double embedder_noise_ref_side = 3.0;
    uint64_t seed = 0;

    void validate() const;
};

struct SyntheticGroundTruth {
    std::vector<int> concept_labels;  // per Gaussian
    std::vector<std::pair<int, int>> active_intervals;  // per concept, inclusive
    MatrixXfR concept_embeddings;    // concepts x D, orthonormal
    Eigen::VectorXf background_embedding;
    MatrixXfR canonical_vectors;     // canonical_count x D
    std::vector<std::array<float, 3>> concept_colors;  // resting colour, then per-concept active colour
    /// (view, t, concept) -> H*W binary mask (1 = concept contributes >= 0.5)
    std::map<std::tuple<std::string, int, int>, std::vector<uint8_t>> masks;

    /// Concept a Gaussian shows at t (the cluster reads as body outside its interval).
    int effective_concept(int gaussian, int t) const;
};

std::pair<DynamicScene, SyntheticGroundTruth> synth_scene(const SynthSpec& spec);

/// Embedder whose palette matches the scene's rendered colours.
SyntheticEmbedderConfig synthetic_embedder_config(const SynthSpec& spec, const SyntheticGroundTruth& gt);

/// RGB videos of every camera (black background).
std::vector<Video> render_videos(const DynamicScene& scene);

/// Writes scene/, videos/, embedder.json, queries.json (+ vectors) and
/// annotations/<scene>/<query>/... for the active concept under `dir`.
void write_synth_workspace(const std::filesystem::path& dir, const SynthSpec& spec);

/// Phrase of the planted query in the workspace dictionary.
inline const char* kPlantedQuery = "cluster";

} // namespace legs4
