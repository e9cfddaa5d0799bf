#pragma once

#include "legs4/query.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace legs4 {

/// Maps phrases to embeddings: a JSON dictionary {"phrase": "path/to/vector.4leg"}
/// (paths relative to the dictionary) is consulted first, then the text
/// endpoint of an embedder sidecar.
class TextResolver {
public:
    TextResolver() = default;
    TextResolver(std::optional<std::filesystem::path> dictionary, std::optional<std::string> endpoint);

    /// Dictionary from `dictionary` if given; endpoint from LEGS4_EMBEDDER_URL.
    static TextResolver from_environment(std::optional<std::filesystem::path> dictionary);

    void add(const std::string& phrase, Eigen::VectorXf vector);
    bool has_dictionary_entry(const std::string& phrase) const { return dictionary_.count(phrase) > 0; }

    /// Throws "no text embedder" when neither source can embed the phrase.
    Eigen::VectorXf resolve(const std::string& phrase) const;
    QueryEmbedding query(const std::string& phrase) const { return make_query(resolve(phrase), phrase); }
    CanonicalSet canonicals(const std::vector<std::string>& phrases = CanonicalSet::default_phrases()) const;

private:
    std::map<std::string, Eigen::VectorXf> dictionary_;
    std::optional<std::string> endpoint_;
};

} // namespace legs4
