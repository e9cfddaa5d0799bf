#include "legs4/image_io.hpp"

#include "legs4/error.hpp"
#include "legs4/tensor_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace legs4 {

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
    if (image.pixels.size() != static_cast<size_t>(image.width) * image.height)
        throw ValidationError("write_pgm: pixel count mismatch");
    std::ostringstream header;
    header << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<uint8_t> bytes;
    const std::string h = header.str();
    bytes.insert(bytes.end(), h.begin(), h.end());
    bytes.insert(bytes.end(), image.pixels.begin(), image.pixels.end());
    write_file_bytes(path, bytes);
}

GrayImage read_pgm(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    size_t pos = 0;
    auto token = [&]() {
        std::string tok;
        while (pos < bytes.size()) {
            const char c = static_cast<char>(bytes[pos]);
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                if (!tok.empty()) break;
                ++pos;
            } else {
                tok.push_back(c);
                ++pos;
            }
        }
        return tok;
    };
    if (token() != "P5") throw ValidationError(path.string() + ": not a binary PGM");
    GrayImage img;
    try {
        img.width = std::stoi(token());
        img.height = std::stoi(token());
        if (std::stoi(token()) != 255) throw ValidationError(path.string() + ": only maxval 255 is supported");
    } catch (const std::invalid_argument&) {
        throw ValidationError(path.string() + ": malformed PGM header");
    }
    ++pos;  // single whitespace after maxval
    const size_t n = static_cast<size_t>(img.width) * img.height;
    if (img.width <= 0 || img.height <= 0 || bytes.size() < pos + n) throw ValidationError(path.string() + ": truncated PGM");
    img.pixels.assign(bytes.begin() + static_cast<long>(pos), bytes.begin() + static_cast<long>(pos + n));
    return img;
}

namespace {

void png_append(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<std::vector<uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + len);
}

void png_flush(png_structp) {}

} // namespace

std::vector<uint8_t> encode_png(int width, int height, const std::vector<uint8_t>& rgb) {
    if (rgb.size() != static_cast<size_t>(width) * height * 3) throw ValidationError("encode_png: pixel count mismatch");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    std::vector<uint8_t> out;
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encoding failed");
    }
    png_set_write_fn(png, &out, png_append, png_flush);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<size_t>(y) * width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

void write_png(const std::filesystem::path& path, int width, int height, const std::vector<uint8_t>& rgb) {
    write_file_bytes(path, encode_png(width, height, rgb));
}

std::array<uint8_t, 3> turbo(double v) {
    const double x = std::clamp(v, 0.0, 1.0);
    // Polynomial approximation of the Turbo colormap (Mikhailov, 2019).
    const double r = 0.13572138 + x * (4.61539260 + x * (-42.66032258 + x * (132.13108234 + x * (-152.94239396 + x * 59.28637943))));
    const double g = 0.09140261 + x * (2.19418839 + x * (4.84296658 + x * (-14.18503333 + x * (4.27729857 + x * 2.82956604))));
    const double b = 0.10667330 + x * (12.64194608 + x * (-60.58204836 + x * (110.36276771 + x * (-89.90310912 + x * 27.34824973))));
    auto q = [](double c) { return static_cast<uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0)); };
    return {q(r), q(g), q(b)};
}

std::vector<uint8_t> to_rgb8(const Eigen::Ref<const Eigen::MatrixXf>& rgb) {
    std::vector<uint8_t> out(static_cast<size_t>(rgb.rows()) * 3);
    for (Eigen::Index p = 0; p < rgb.rows(); ++p)
        for (int c = 0; c < 3; ++c)
            out[static_cast<size_t>(p) * 3 + c] =
                static_cast<uint8_t>(std::lround(std::clamp(rgb(p, c), 0.0f, 1.0f) * 255.0f));
    return out;
}

void write_video(const std::filesystem::path& path, const Video& video) {
    write_tensor(path, Tensor::from_u8({static_cast<uint64_t>(video.frames), static_cast<uint64_t>(video.height),
                                        static_cast<uint64_t>(video.width), 3},
                                       video.rgb));
}

Video read_video(const std::filesystem::path& path, const std::string& view) {
    const Tensor t = read_tensor(path);
    if (t.dtype != DType::U8 || t.dims.size() != 4 || t.dims[3] != 3)
        throw ValidationError(path.string() + ": expected a T x H x W x 3 u8 video blob");
    Video v;
    v.view = view;
    v.frames = static_cast<int>(t.dims[0]);
    v.height = static_cast<int>(t.dims[1]);
    v.width = static_cast<int>(t.dims[2]);
    v.rgb = t.u8;
    return v;
}

} // namespace legs4
