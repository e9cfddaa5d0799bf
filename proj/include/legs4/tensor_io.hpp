#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace legs4 {

/// Element type tag stored in a tensor blob header.
enum class DType : uint8_t { F32 = 0, U8 = 1 };

/// In-memory form of a "4LEG" tensor blob: shape plus a row-major
/// little-endian payload. Exactly one of f32/u8 is populated, per dtype.
struct Tensor {
    DType dtype = DType::F32;
    std::vector<uint64_t> dims;
    std::vector<float> f32;
    std::vector<uint8_t> u8;

    static Tensor from_f32(std::vector<uint64_t> dims, std::vector<float> data);
    static Tensor from_u8(std::vector<uint64_t> dims, std::vector<uint8_t> data);

    uint64_t element_count() const;
    bool operator==(const Tensor&) const = default;
};

std::vector<uint8_t> encode_tensor(const Tensor& tensor);
Tensor decode_tensor(std::span<const uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

/// Reads an f32 tensor and checks its shape; `what` names the field in errors.
std::vector<float> read_f32(const std::filesystem::path& path, const std::vector<uint64_t>& expected_dims,
                            const std::string& what);

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const uint8_t> bytes);

} // namespace legs4
