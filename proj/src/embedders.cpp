#include "legs4/embedders.hpp"

#include "legs4/rng.hpp"
#include "legs4/tensor_io.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

namespace legs4 {

using nlohmann::json;

SyntheticEmbedder::SyntheticEmbedder(SyntheticEmbedderConfig config) : config_(std::move(config)) {
    if (config_.dim <= 0) throw Error("synthetic embedder: dim must be positive");
    for (const auto& e : config_.palette)
        if (static_cast<int>(e.embedding.size()) != config_.dim)
            throw Error("synthetic embedder: palette embedding has wrong dimension");
}

std::vector<float> SyntheticEmbedder::embed(const Tube& tube) {
    const int L = tube.length;
    const size_t n_pal = config_.palette.size();
    std::vector<double> kernel(static_cast<size_t>(L), 1.0);
    if (config_.temporal_sigma > 0.0) {
        const double centre = L / 2;
        for (int k = 0; k < L; ++k) {
            const double dk = k - centre;
            kernel[k] = std::exp(-dk * dk / (2.0 * config_.temporal_sigma * config_.temporal_sigma));
        }
    }
    double kernel_sum = 0.0;
    for (double w : kernel) kernel_sum += w;

    std::vector<double> share(n_pal, 0.0);
    double unmatched = 0.0;
    const double npix = static_cast<double>(tube.height) * tube.width;
    const double r2 = config_.match_radius * config_.match_radius;
    for (int k = 0; k < L; ++k) {
        const double wk = kernel[k] / (kernel_sum * npix);
        for (int y = 0; y < tube.height; ++y) {
            for (int x = 0; x < tube.width; ++x) {
                const uint8_t* p = tube.pixel(k, x, y);
                double best = r2;
                int best_i = -1;
                for (size_t i = 0; i < n_pal; ++i) {
                    double dist = 0.0;
                    for (int c = 0; c < 3; ++c) {
                        const double diff = p[c] / 255.0 - config_.palette[i].rgb[c];
                        dist += diff * diff;
                    }
                    if (dist <= best) {
                        best = dist;
                        best_i = static_cast<int>(i);
                    }
                }
                if (best_i >= 0)
                    share[static_cast<size_t>(best_i)] += wk;
                else
                    unmatched += wk;
            }
        }
    }

    std::vector<double> v(static_cast<size_t>(config_.dim), 0.0);
    for (size_t i = 0; i < n_pal; ++i) {
        const double w = std::pow(share[i], config_.sharpness);
        for (int j = 0; j < config_.dim; ++j) v[j] += w * config_.palette[i].embedding[j];
    }
    const uint64_t h = tube_content_hash(tube) ^ config_.seed;
    if (unmatched > 0.0) {
        Rng rng(h);
        const auto r = random_unit_vector(rng, static_cast<size_t>(config_.dim));
        const double w = std::pow(unmatched, config_.sharpness);
        for (int j = 0; j < config_.dim; ++j) v[j] += w * r[j];
    }
    if (config_.noise_ref_side > 0.0) {
        Rng rng(h ^ 0x5DEECE66DULL);
        const auto r = random_unit_vector(rng, static_cast<size_t>(config_.dim));
        const double amp = config_.noise_ref_side / std::min(tube.height, tube.width);
        for (int j = 0; j < config_.dim; ++j) v[j] += amp * r[j];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    std::vector<float> out(v.size());
    for (size_t j = 0; j < v.size(); ++j) out[j] = static_cast<float>(norm > 0 ? v[j] / norm : 0.0);
    return out;
}

void save_synthetic_embedder(const SyntheticEmbedderConfig& config, const std::filesystem::path& path) {
    json palette = json::array();
    for (const auto& e : config.palette) palette.push_back({{"rgb", e.rgb}, {"embedding", e.embedding}});
    json j{{"kind", "synthetic"},
           {"dim", config.dim},
           {"seed", config.seed},
           {"palette", palette},
           {"match_radius", config.match_radius},
           {"temporal_sigma", config.temporal_sigma},
           {"sharpness", config.sharpness},
           {"noise_ref_side", config.noise_ref_side},
           {"input_side", config.input_side}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

SyntheticEmbedderConfig load_synthetic_embedder(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing file: " + path.string());
    json j = json::parse(in);
    SyntheticEmbedderConfig c;
    c.dim = j.at("dim").get<int>();
    c.seed = j.value("seed", uint64_t{0});
    for (const auto& e : j.at("palette"))
        c.palette.push_back({e.at("rgb").get<std::array<float, 3>>(), e.at("embedding").get<std::vector<float>>()});
    c.match_radius = j.value("match_radius", c.match_radius);
    c.temporal_sigma = j.value("temporal_sigma", c.temporal_sigma);
    c.sharpness = j.value("sharpness", c.sharpness);
    c.noise_ref_side = j.value("noise_ref_side", c.noise_ref_side);
    c.input_side = j.value("input_side", c.input_side);
    return c;
}

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

DictionaryEmbedder::DictionaryEmbedder(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing file: " + path.string());
    json j;
    try {
        j = json::parse(in);
        dim_ = j.at("dim").get<int>();
        input_side_ = j.value("input_side", 0);
        for (const auto& [key, value] : j.at("entries").items()) {
            auto v = value.get<std::vector<float>>();
            if (static_cast<int>(v.size()) != dim_) throw ValidationError("dictionary entry " + key + " has wrong dimension");
            entries_[std::stoull(key, nullptr, 16)] = std::move(v);
        }
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

std::vector<float> DictionaryEmbedder::embed(const Tube& tube) {
    const uint64_t h = tube_content_hash(tube);
    const auto it = entries_.find(h);
    if (it == entries_.end()) throw EmbedderError("no dictionary entry for tube hash " + hash_hex(h));
    return it->second;
}

HttpEmbedder::HttpEmbedder(std::string url, int dim, int input_side, size_t max_concurrency)
    : url_(std::move(url)), dim_(dim), input_side_(input_side), max_concurrency_(std::max<size_t>(1, max_concurrency)) {}

std::vector<float> HttpEmbedder::embed(const Tube& tube) {
    httplib::Client client(url_);
    client.set_connection_timeout(5);
    client.set_read_timeout(60);
    const Tensor payload = Tensor::from_u8({static_cast<uint64_t>(tube.length), static_cast<uint64_t>(tube.height),
                                            static_cast<uint64_t>(tube.width), 3},
                                           tube.data);
    const auto bytes = encode_tensor(payload);
    auto res = client.Post("/embed", reinterpret_cast<const char*>(bytes.data()), bytes.size(),
                           "application/octet-stream");
    if (!res) throw EmbedderError("embedder sidecar unreachable at " + url_ + ": " + httplib::to_string(res.error()));
    if (res->status != 200) throw EmbedderError("embedder sidecar returned HTTP " + std::to_string(res->status));
    const Tensor out = decode_tensor({reinterpret_cast<const uint8_t*>(res->body.data()), res->body.size()});
    if (out.dtype != DType::F32 || out.element_count() != static_cast<uint64_t>(dim_))
        throw EmbedderError("embedder sidecar returned a malformed feature blob");
    return out.f32;
}

} // namespace legs4
