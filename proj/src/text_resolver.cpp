#include "legs4/text_resolver.hpp"

#include "legs4/error.hpp"
#include "legs4/tensor_io.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>

namespace legs4 {

TextResolver::TextResolver(std::optional<std::filesystem::path> dictionary, std::optional<std::string> endpoint)
    : endpoint_(std::move(endpoint)) {
    if (!dictionary) return;
    std::ifstream in(*dictionary);
    if (!in) throw IoError("missing file: " + dictionary->string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("query dictionary " + dictionary->string() + ": " + e.what());
    }
    if (!j.is_object()) throw ValidationError("query dictionary must map phrases to blob paths");
    const auto base = dictionary->parent_path();
    for (const auto& [phrase, rel] : j.items()) {
        const Tensor t = read_tensor(base / rel.get<std::string>());
        if (t.dtype != DType::F32 || t.f32.empty()) throw ValidationError("query dictionary entry '" + phrase + "' is not an f32 vector");
        add(phrase, Eigen::Map<const Eigen::VectorXf>(t.f32.data(), static_cast<Eigen::Index>(t.f32.size())));
    }
}

TextResolver TextResolver::from_environment(std::optional<std::filesystem::path> dictionary) {
    std::optional<std::string> url;
    if (const char* env = std::getenv("LEGS4_EMBEDDER_URL"); env && *env) url = env;
    return TextResolver(std::move(dictionary), std::move(url));
}

void TextResolver::add(const std::string& phrase, Eigen::VectorXf vector) { dictionary_[phrase] = std::move(vector); }

Eigen::VectorXf TextResolver::resolve(const std::string& phrase) const {
    if (const auto it = dictionary_.find(phrase); it != dictionary_.end()) return it->second;
    if (!endpoint_) throw Error("no text embedder for \"" + phrase + "\" (not in dictionary and LEGS4_EMBEDDER_URL unset)");
    httplib::Client client(*endpoint_);
    client.set_connection_timeout(5);
    client.set_read_timeout(30);
    const std::string body = nlohmann::json{{"text", phrase}}.dump();
    auto res = client.Post("/embed_text", body, "application/json");
    if (!res) throw Error("text embedder unreachable at " + *endpoint_ + ": " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error("text embedder returned HTTP " + std::to_string(res->status));
    const Tensor t = decode_tensor({reinterpret_cast<const uint8_t*>(res->body.data()), res->body.size()});
    if (t.dtype != DType::F32 || t.f32.empty()) throw Error("text embedder returned a malformed blob");
    return Eigen::Map<const Eigen::VectorXf>(t.f32.data(), static_cast<Eigen::Index>(t.f32.size()));
}

CanonicalSet TextResolver::canonicals(const std::vector<std::string>& phrases) const {
    if (phrases.empty()) throw ValidationError("canonical set is empty");
    MatrixXfR vecs;
    for (size_t i = 0; i < phrases.size(); ++i) {
        const Eigen::VectorXf v = resolve(phrases[i]);
        if (i == 0) vecs.resize(static_cast<Eigen::Index>(phrases.size()), v.size());
        if (v.size() != vecs.cols()) throw ValidationError("canonical embeddings differ in dimension");
        vecs.row(static_cast<Eigen::Index>(i)) = v.transpose();
    }
    return make_canonicals(phrases, vecs);
}

} // namespace legs4
