#pragma once

#include "legs4/features.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace legs4 {

struct GrayImage {
    int width = 0, height = 0;
    std::vector<uint8_t> pixels;
};

/// Binary P5 with maxval 255.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

/// 8-bit RGB PNG; rgb is H*W*3.
std::vector<uint8_t> encode_png(int width, int height, const std::vector<uint8_t>& rgb);
void write_png(const std::filesystem::path& path, int width, int height, const std::vector<uint8_t>& rgb);

/// Turbo colormap (polynomial fit) for v in [0,1], values outside clamp.
std::array<uint8_t, 3> turbo(double v);

/// Float RGB in [0,1] (H*W rows of 3) to bytes.
std::vector<uint8_t> to_rgb8(const Eigen::Ref<const Eigen::MatrixXf>& rgb);

/// Videos persist as u8 tensor blobs of shape T x H x W x 3.
void write_video(const std::filesystem::path& path, const Video& video);
Video read_video(const std::filesystem::path& path, const std::string& view);

} // namespace legs4
