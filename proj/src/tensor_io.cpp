#include "legs4/tensor_io.hpp"

#include "legs4/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace legs4 {

static_assert(std::endian::native == std::endian::little, "tensor blobs assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'4', 'L', 'E', 'G'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::vector<uint8_t>& out, T value) {
    const auto* p = reinterpret_cast<const uint8_t*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const uint8_t> bytes, size_t& offset) {
    if (offset + sizeof(T) > bytes.size()) throw IoError("tensor blob truncated in header");
    T value;
    std::memcpy(&value, bytes.data() + offset, sizeof(T));
    offset += sizeof(T);
    return value;
}

uint64_t product(const std::vector<uint64_t>& dims) {
    uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

std::string dims_string(const std::vector<uint64_t>& dims) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
    os << ']';
    return os.str();
}

} // namespace

Tensor Tensor::from_f32(std::vector<uint64_t> dims, std::vector<float> data) {
    if (product(dims) != data.size()) throw Error("tensor payload does not match dims " + dims_string(dims));
    Tensor t;
    t.dtype = DType::F32;
    t.dims = std::move(dims);
    t.f32 = std::move(data);
    return t;
}

Tensor Tensor::from_u8(std::vector<uint64_t> dims, std::vector<uint8_t> data) {
    if (product(dims) != data.size()) throw Error("tensor payload does not match dims " + dims_string(dims));
    Tensor t;
    t.dtype = DType::U8;
    t.dims = std::move(dims);
    t.u8 = std::move(data);
    return t;
}

uint64_t Tensor::element_count() const { return product(dims); }

std::vector<uint8_t> encode_tensor(const Tensor& tensor) {
    if (tensor.dims.size() > 255) throw Error("tensor rank exceeds 255");
    std::vector<uint8_t> out(kMagic, kMagic + 4);
    put<uint32_t>(out, kVersion);
    put<uint8_t>(out, static_cast<uint8_t>(tensor.dtype));
    put<uint8_t>(out, static_cast<uint8_t>(tensor.dims.size()));
    for (auto d : tensor.dims) put<uint64_t>(out, d);
    const uint64_t n = tensor.element_count();
    if (tensor.dtype == DType::F32) {
        if (tensor.f32.size() != n) throw Error("f32 payload size mismatch");
        const auto* p = reinterpret_cast<const uint8_t*>(tensor.f32.data());
        out.insert(out.end(), p, p + n * sizeof(float));
    } else {
        if (tensor.u8.size() != n) throw Error("u8 payload size mismatch");
        out.insert(out.end(), tensor.u8.begin(), tensor.u8.end());
    }
    return out;
}

Tensor decode_tensor(std::span<const uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("bad tensor magic");
    size_t offset = 4;
    const auto version = get<uint32_t>(bytes, offset);
    if (version != kVersion) throw IoError("unsupported tensor version " + std::to_string(version));
    const auto dtype = get<uint8_t>(bytes, offset);
    if (dtype > 1) throw IoError("unsupported tensor dtype " + std::to_string(dtype));
    const auto ndim = get<uint8_t>(bytes, offset);
    Tensor t;
    t.dtype = static_cast<DType>(dtype);
    for (uint8_t i = 0; i < ndim; ++i) t.dims.push_back(get<uint64_t>(bytes, offset));
    const uint64_t n = t.element_count();
    const uint64_t payload = n * (t.dtype == DType::F32 ? sizeof(float) : 1);
    if (bytes.size() - offset != payload)
        throw IoError("tensor payload size mismatch for dims " + dims_string(t.dims));
    if (t.dtype == DType::F32) {
        t.f32.resize(n);
        std::memcpy(t.f32.data(), bytes.data() + offset, payload);
    } else {
        t.u8.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
    }
    return t;
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("missing file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
    write_file_bytes(path, encode_tensor(tensor));
}

Tensor read_tensor(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_tensor(bytes);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

std::vector<float> read_f32(const std::filesystem::path& path, const std::vector<uint64_t>& expected_dims,
                            const std::string& what) {
    Tensor t = read_tensor(path);
    if (t.dtype != DType::F32) throw ValidationError(what + ": expected f32 payload");
    if (t.dims != expected_dims)
        throw ValidationError(what + ": dimension mismatch, expected " + dims_string(expected_dims) + " got " +
                              dims_string(t.dims));
    return std::move(t.f32);
}

} // namespace legs4
