#pragma once

#include "legs4/features.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace legs4 {

/// Deterministic stand-in for a video encoder. Each tube pixel is matched to
/// the nearest palette colour; the output mixes the palette embeddings by
/// their (temporally weighted, sharpened) share of the tube, plus
/// content-hash-derived components for unmatched pixels and for the
/// reduced recognisability of small crops.
struct SyntheticEmbedderConfig {
    int dim = 32;
    uint64_t seed = 0;
    struct Entry {
        std::array<float, 3> rgb;
        std::vector<float> embedding;
    };
    std::vector<Entry> palette;
    /// Pixels farther than this (RGB distance in [0,1] units) from every palette colour are unmatched.
    double match_radius = 0.5;
    /// Std-dev (frames) of the temporal weighting around the tube centre; <= 0 weights frames uniformly.
    double temporal_sigma = 0.5;
    /// Exponent applied to palette shares; > 1 favours the dominant content.
    double sharpness = 2.0;
    /// Amplitude of the small-crop term is noise_ref_side / crop side; 0 disables it.
    double noise_ref_side = 0.0;
    int input_side = 0;
};

class SyntheticEmbedder final : public Embedder {
public:
    explicit SyntheticEmbedder(SyntheticEmbedderConfig config);
    int dim() const override { return config_.dim; }
    int input_side() const override { return config_.input_side; }
    std::vector<float> embed(const Tube& tube) override;
    size_t max_concurrency() const override { return 64; }
    const SyntheticEmbedderConfig& config() const { return config_; }

private:
    SyntheticEmbedderConfig config_;
};

void save_synthetic_embedder(const SyntheticEmbedderConfig& config, const std::filesystem::path& path);
SyntheticEmbedderConfig load_synthetic_embedder(const std::filesystem::path& path);

/// Looks tubes up by content hash in a JSON file:
/// {"dim": D, "input_side": n, "entries": {"<16 hex digits>": [D floats], ...}}
class DictionaryEmbedder final : public Embedder {
public:
    explicit DictionaryEmbedder(const std::filesystem::path& path);
    int dim() const override { return dim_; }
    int input_side() const override { return input_side_; }
    std::vector<float> embed(const Tube& tube) override;
    size_t max_concurrency() const override { return 64; }

private:
    int dim_ = 0;
    int input_side_ = 0;
    std::map<uint64_t, std::vector<float>> entries_;
};

std::string hash_hex(uint64_t h);

/// Client for an embedder sidecar: POST {url}/embed with a u8 tube tensor
/// blob, response is a D-element f32 tensor blob.
class HttpEmbedder final : public Embedder {
public:
    HttpEmbedder(std::string url, int dim, int input_side, size_t max_concurrency = 4);
    int dim() const override { return dim_; }
    int input_side() const override { return input_side_; }
    std::vector<float> embed(const Tube& tube) override;
    size_t max_concurrency() const override { return max_concurrency_; }

private:
    std::string url_;
    int dim_;
    int input_side_;
    size_t max_concurrency_;
};

} // namespace legs4
