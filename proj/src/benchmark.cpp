#include "legs4/benchmark.hpp"

#include "legs4/error.hpp"
#include "legs4/image_io.hpp"
#include "legs4/parallel.hpp"
#include "legs4/tensor_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace legs4 {

namespace fs = std::filesystem;
using nlohmann::json;

std::set<int> ViewAnnotation::frames() const {
    std::set<int> out;
    for (const auto& [t, m] : masks)
        if (std::any_of(m.begin(), m.end(), [](uint8_t v) { return v != 0; })) out.insert(t);
    return out;
}

std::string slugify(const std::string& text) {
    std::string out;
    for (const unsigned char c : text) {
        if (std::isalnum(c)) {
            out.push_back(static_cast<char>(std::tolower(c)));
        } else if (!out.empty() && out.back() != '_') {
            out.push_back('_');
        }
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out.empty() ? "query" : out;
}

void write_annotations(const fs::path& root, const AnnotationSet& set) {
    const fs::path qdir = root / set.scene / slugify(set.query);
    fs::create_directories(qdir);
    json meta;
    meta["query"] = set.query;
    meta["intervals"] = set.intervals;
    if (set.embedding) meta["embedding"] = *set.embedding;
    std::ofstream out(qdir / "meta.json");
    if (!out) throw IoError("cannot write " + (qdir / "meta.json").string());
    out << meta.dump(2) << '\n';
    for (const auto& v : set.views)
        for (const auto& [t, mask] : v.masks) {
            GrayImage img{v.width, v.height, std::vector<uint8_t>(mask.size())};
            for (size_t i = 0; i < mask.size(); ++i) img.pixels[i] = mask[i] ? 255 : 0;
            write_pgm(qdir / ("view_" + v.view) / ("t_" + std::to_string(t) + ".pgm"), img);
        }
}

std::vector<AnnotationSet> load_annotations(const fs::path& root, const std::string& scene,
                                            std::vector<std::string>* problems) {
    auto problem = [&](const std::string& msg) {
        if (!problems) throw IoError(msg);
        problems->push_back(msg);
    };
    std::vector<AnnotationSet> out;
    const fs::path sdir = root / scene;
    if (!fs::is_directory(sdir)) {
        problem("missing annotation directory: " + sdir.string());
        return out;
    }
    std::vector<fs::path> qdirs;
    for (const auto& e : fs::directory_iterator(sdir))
        if (e.is_directory()) qdirs.push_back(e.path());
    std::sort(qdirs.begin(), qdirs.end());
    for (const auto& qdir : qdirs) {
        try {
            std::ifstream in(qdir / "meta.json");
            if (!in) throw IoError("missing file: " + (qdir / "meta.json").string());
            const json meta = json::parse(in);
            AnnotationSet set;
            set.scene = scene;
            set.query = meta.at("query").get<std::string>();
            for (const auto& iv : meta.value("intervals", json::array()))
                set.intervals.emplace_back(iv.at(0).get<int>(), iv.at(1).get<int>());
            if (meta.contains("embedding")) set.embedding = meta["embedding"].get<std::string>();
            std::vector<fs::path> vdirs;
            for (const auto& e : fs::directory_iterator(qdir))
                if (e.is_directory() && e.path().filename().string().rfind("view_", 0) == 0) vdirs.push_back(e.path());
            std::sort(vdirs.begin(), vdirs.end());
            for (const auto& vdir : vdirs) {
                ViewAnnotation va;
                va.view = vdir.filename().string().substr(5);
                for (const auto& f : fs::directory_iterator(vdir)) {
                    const std::string name = f.path().filename().string();
                    if (name.rfind("t_", 0) != 0 || f.path().extension() != ".pgm") continue;
                    const int t = std::stoi(name.substr(2));
                    GrayImage img = read_pgm(f.path());
                    if (va.masks.empty()) {
                        va.width = img.width;
                        va.height = img.height;
                    } else if (img.width != va.width || img.height != va.height) {
                        throw ValidationError(f.path().string() + ": mask size differs from other frames");
                    }
                    for (auto& p : img.pixels) p = p >= 128 ? 1 : 0;
                    va.masks[t] = std::move(img.pixels);
                }
                set.views.push_back(std::move(va));
            }
            out.push_back(std::move(set));
        } catch (const std::exception& e) {
            problem(qdir.string() + ": " + e.what());
        }
    }
    return out;
}

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd r;
    if (values.empty()) return r;
    for (double v : values) r.mean += v;
    r.mean /= static_cast<double>(values.size());
    double var = 0;
    for (double v : values) var += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(var / static_cast<double>(values.size()));
    return r;
}

std::vector<QueryAggregate> aggregate_rows(const std::vector<MetricRow>& rows) {
    std::vector<QueryAggregate> out;
    std::map<std::pair<std::string, std::string>, std::vector<const MetricRow*>> groups;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& r : rows) {
        auto key = std::make_pair(r.scene, r.query);
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&r);
    }
    for (const auto& key : order) {
        const auto& g = groups[key];
        auto col = [&](double MetricRow::*m) {
            std::vector<double> v;
            for (const auto* r : g) v.push_back(r->*m);
            return mean_std(v);
        };
        out.push_back({key.first, key.second, col(&MetricRow::vap), col(&MetricRow::viou), col(&MetricRow::tiou),
                       col(&MetricRow::trec), col(&MetricRow::tprec)});
    }
    return out;
}

MetricReport run_benchmark(const std::map<std::string, BenchmarkScene>& scenes,
                           const std::vector<AnnotationSet>& annotations, const TextResolver& resolver,
                           const EngineConfig& cfg) {
    MetricReport report;
    std::optional<CanonicalSet> canon;
    for (const auto& ann : annotations) {
        const auto it = scenes.find(ann.scene);
        if (it == scenes.end()) {
            report.problems.push_back("annotations reference unknown scene " + ann.scene);
            continue;
        }
        const DynamicScene& scene = *it->second.scene;
        const CodecParams* codec = it->second.codec;
        try {
            if (!canon) canon = resolver.canonicals(cfg.canonical_phrases);
            QueryEmbedding q;
            if (ann.embedding) {
                const fs::path p = it->second.annotation_dir / slugify(ann.query) / *ann.embedding;
                const Tensor blob = read_tensor(p);
                q = make_query(Eigen::Map<const Eigen::VectorXf>(blob.f32.data(), static_cast<Eigen::Index>(blob.f32.size())),
                               ann.query);
            } else {
                q = resolver.query(ann.query);
            }
            const RelevancyVolume vol = temporal_curve(scene, codec, q, *canon, cfg.query);
            const Localization loc = localize(vol, cfg.query.dilation);
            const auto pf = loc.frames();
            const std::set<int> pred_frames(pf.begin(), pf.end());

            std::vector<const ViewAnnotation*> views;
            for (const auto& va : ann.views) {
                const auto cam = std::find_if(scene.cameras.begin(), scene.cameras.end(),
                                              [&](const Camera& c) { return c.id == va.view; });
                if (cam == scene.cameras.end()) {
                    report.problems.push_back(ann.scene + "/" + ann.query + ": annotation view " + va.view +
                                              " is not a scene camera");
                    continue;
                }
                if (cam->width != va.width || cam->height != va.height) {
                    report.problems.push_back(ann.scene + "/" + ann.query + ": view " + va.view +
                                              " mask size does not match the camera");
                    continue;
                }
                views.push_back(&va);
            }
            std::map<int, MatrixXfR> latents;
            for (int t : pred_frames) latents[t] = rendered_latents(scene, t);

            std::vector<MetricRow> rows(views.size());
            parallel_for(views.size(), [&](size_t vi) {
                const ViewAnnotation& va = *views[vi];
                const Camera& cam = scene.camera(va.view);
                const std::set<int> gt_frames = va.frames();
                FrameBoxes pred_boxes{pred_frames, {}}, gt_boxes{gt_frames, {}};
                std::map<int, Eigen::VectorXf> maps;
                for (int t : pred_frames) {
                    const SpatialMap m = spatial_map(scene, t, latents.at(t), cam, codec, q, *canon, cfg.query.tile);
                    if (auto b = map_to_bbox(m.scores, m.width, m.height, cfg.bbox_threshold)) pred_boxes.boxes[t] = *b;
                    maps[t] = m.scores;
                }
                for (int t : gt_frames)
                    if (auto b = mask_bbox(va.masks.at(t), va.width, va.height)) gt_boxes.boxes[t] = *b;
                const auto prf = temporal_prf(pred_frames, gt_frames);
                rows[vi] = {ann.scene, ann.query, va.view, vap(pred_frames, maps, gt_frames, va.masks),
                            viou(pred_boxes, gt_boxes), prf.tiou, prf.trec, prf.tprec};
            });
            report.rows.insert(report.rows.end(), rows.begin(), rows.end());
        } catch (const std::exception& e) {
            report.problems.push_back(ann.scene + "/" + ann.query + ": " + e.what());
        }
    }
    report.aggregates = aggregate_rows(report.rows);
    return report;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back().push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back().push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else {
            out.back().push_back(c);
        }
    }
    return out;
}

constexpr const char* kCsvHeader = "scene,query,view,vAP,vIoU,tIoU,tRec,tPrec";

json mean_std_json(const MeanStd& m) { return {{"mean", 100.0 * m.mean}, {"std", 100.0 * m.std}}; }

} // namespace

void write_report_csv(const fs::path& path, const MetricReport& report) {
    std::ostringstream out;
    out << kCsvHeader << '\n' << std::fixed << std::setprecision(4);
    for (const auto& r : report.rows)
        out << csv_field(r.scene) << ',' << csv_field(r.query) << ',' << csv_field(r.view) << ',' << 100 * r.vap << ','
            << 100 * r.viou << ',' << 100 * r.tiou << ',' << 100 * r.trec << ',' << 100 * r.tprec << '\n';
    const std::string s = out.str();
    write_file_bytes(path, {reinterpret_cast<const uint8_t*>(s.data()), s.size()});
}

std::vector<MetricRow> read_report_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing file: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw ValidationError(path.string() + ": unexpected report header");
    std::vector<MetricRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = csv_split(line);
        if (f.size() != 8) throw ValidationError(path.string() + ": malformed report row");
        rows.push_back({f[0], f[1], f[2], std::stod(f[3]) / 100, std::stod(f[4]) / 100, std::stod(f[5]) / 100,
                        std::stod(f[6]) / 100, std::stod(f[7]) / 100});
    }
    return rows;
}

void write_report_json(const fs::path& path, const MetricReport& report) {
    json j;
    j["rows"] = json::array();
    for (const auto& r : report.rows)
        j["rows"].push_back({{"scene", r.scene}, {"query", r.query}, {"view", r.view}, {"vAP", 100 * r.vap},
                             {"vIoU", 100 * r.viou}, {"tIoU", 100 * r.tiou}, {"tRec", 100 * r.trec},
                             {"tPrec", 100 * r.tprec}});
    j["aggregates"] = json::array();
    for (const auto& a : report.aggregates)
        j["aggregates"].push_back({{"scene", a.scene}, {"query", a.query}, {"vAP", mean_std_json(a.vap)},
                                   {"vIoU", mean_std_json(a.viou)}, {"tIoU", mean_std_json(a.tiou)},
                                   {"tRec", mean_std_json(a.trec)}, {"tPrec", mean_std_json(a.tprec)}});
    j["problems"] = report.problems;
    const std::string s = j.dump(2) + "\n";
    write_file_bytes(path, {reinterpret_cast<const uint8_t*>(s.data()), s.size()});
}

} // namespace legs4
