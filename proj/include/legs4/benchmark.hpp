#pragma once

#include "legs4/codec.hpp"
#include "legs4/metrics.hpp"
#include "legs4/query.hpp"
#include "legs4/scene.hpp"
#include "legs4/text_resolver.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace legs4 {

struct ViewAnnotation {
    std::string view;
    int width = 0, height = 0;
    std::map<int, std::vector<uint8_t>> masks;  // t -> H*W, nonzero = foreground

    /// Frames whose mask is nonempty.
    std::set<int> frames() const;
};

struct AnnotationSet {
    std::string scene;
    std::string query;
    std::vector<std::pair<int, int>> intervals;
    /// Query vector blob, relative to the query directory; used instead of text resolution.
    std::optional<std::string> embedding;
    std::vector<ViewAnnotation> views;
};

std::string slugify(const std::string& text);

/// Layout: root/<scene>/<slug>/meta.json and root/<scene>/<slug>/view_<id>/t_<t>.pgm
void write_annotations(const std::filesystem::path& root, const AnnotationSet& set);

/// Loads every query under root/<scene>. Unreadable entries are appended to
/// `problems` and skipped.
std::vector<AnnotationSet> load_annotations(const std::filesystem::path& root, const std::string& scene,
                                            std::vector<std::string>* problems = nullptr);

struct MetricRow {
    std::string scene, query, view;
    double vap = 0, viou = 0, tiou = 0, trec = 0, tprec = 0;
};

struct MeanStd {
    double mean = 0, std = 0;
};

struct QueryAggregate {
    std::string scene, query;
    MeanStd vap, viou, tiou, trec, tprec;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    std::vector<QueryAggregate> aggregates;
    std::vector<std::string> problems;
};

/// Population mean and standard deviation.
MeanStd mean_std(const std::vector<double>& values);
std::vector<QueryAggregate> aggregate_rows(const std::vector<MetricRow>& rows);

struct EngineConfig {
    QueryOptions query;
    std::vector<std::string> canonical_phrases = CanonicalSet::default_phrases();
    double bbox_threshold = 0.5;

    EngineConfig() { query.dilation = 0; }
};

struct BenchmarkScene {
    const DynamicScene* scene = nullptr;
    const CodecParams* codec = nullptr;
    std::filesystem::path annotation_dir;  // root/<scene>/ for resolving embedding paths
};

MetricReport run_benchmark(const std::map<std::string, BenchmarkScene>& scenes,
                           const std::vector<AnnotationSet>& annotations, const TextResolver& resolver,
                           const EngineConfig& cfg);

/// Columns scene,query,view,vAP,vIoU,tIoU,tRec,tPrec with metrics x100.
void write_report_csv(const std::filesystem::path& path, const MetricReport& report);
std::vector<MetricRow> read_report_csv(const std::filesystem::path& path);
void write_report_json(const std::filesystem::path& path, const MetricReport& report);

} // namespace legs4
