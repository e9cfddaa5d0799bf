#include "cli.hpp"

#include "legs4/benchmark.hpp"
#include "legs4/codec.hpp"
#include "legs4/distill.hpp"
#include "legs4/embedders.hpp"
#include "legs4/features.hpp"
#include "legs4/highlights.hpp"
#include "legs4/image_io.hpp"
#include "legs4/query.hpp"
#include "legs4/service.hpp"
#include "legs4/synth.hpp"
#include "legs4/tensor_io.hpp"
#include "legs4/text_resolver.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <memory>

namespace legs4 {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Defaults, optionally overridden by --config; explicit flags win over both.
struct Settings {
    uint64_t seed = 0;
    ScalePyramidConfig pyramid;
    CodecTrainConfig codec;
    int latent_dim = 16;
    DistillConfig distill;
    QueryOptions query;
    std::vector<std::string> canonicals = CanonicalSet::default_phrases();
};

Aggregation parse_aggregation(const std::string& s) {
    if (s == "average") return Aggregation::Average;
    if (s == "concat") return Aggregation::Concat;
    if (s == "single") return Aggregation::Single;
    throw ValidationError("aggregation must be average, concat or single");
}

void apply_config(Settings& s, const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing file: " + path.string());
    const json j = json::parse(in);
    if (j.contains("scales")) s.pyramid.scales = j["scales"].get<std::vector<double>>();
    s.pyramid.stride_fraction = j.value("stride_fraction", s.pyramid.stride_fraction);
    s.pyramid.tube_length = j.value("tube_length", s.pyramid.tube_length);
    if (j.contains("aggregation")) s.pyramid.aggregation = parse_aggregation(j["aggregation"].get<std::string>());
    s.pyramid.single_index = j.value("single_index", s.pyramid.single_index);
    s.pyramid.normalize_per_scale = j.value("normalize_per_scale", s.pyramid.normalize_per_scale);
    if (j.contains("codec")) {
        const auto& c = j["codec"];
        s.codec.lr = c.value("lr", s.codec.lr);
        s.codec.batch_size = c.value("batch_size", s.codec.batch_size);
        s.codec.steps = c.value("steps", s.codec.steps);
        s.codec.epochs = c.value("epochs", s.codec.epochs);
        s.codec.cosine_weight = c.value("cosine_weight", s.codec.cosine_weight);
        if (c.contains("hidden")) s.codec.hidden = c["hidden"].get<std::vector<int>>();
        s.latent_dim = c.value("d", s.latent_dim);
    }
    if (j.contains("distill")) {
        const auto& d = j["distill"];
        s.distill.k = d.value("k", s.distill.k);
        s.distill.iterations = d.value("iterations", s.distill.iterations);
        s.distill.lr = d.value("lr", s.distill.lr);
        s.distill.attention = d.value("attention", s.distill.attention);
        if (d.contains("init")) s.distill.init = d["init"] == "zeros" ? FeatureInit::Zeros : FeatureInit::Gaussian;
        s.distill.init_sigma = d.value("init_sigma", s.distill.init_sigma);
        s.distill.pixel_subset = d.value("pixel_subset", s.distill.pixel_subset);
    }
    if (j.contains("query")) {
        const auto& q = j["query"];
        s.query.dilation = q.value("dilation", s.query.dilation);
        s.query.smoothed_features = q.value("smoothed_features", s.query.smoothed_features);
        if (q.contains("canonicals")) s.canonicals = q["canonicals"].get<std::vector<std::string>>();
    }
}

std::unique_ptr<Embedder> open_embedder(const std::string& spec, int dim, int input_side) {
    if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
        if (dim <= 0) throw ValidationError("--dim is required for an HTTP embedder");
        return std::make_unique<HttpEmbedder>(spec, dim, input_side);
    }
    std::ifstream in(spec);
    if (!in) throw IoError("missing file: " + spec);
    const json j = json::parse(in);
    if (j.contains("entries")) return std::make_unique<DictionaryEmbedder>(spec);
    return std::make_unique<SyntheticEmbedder>(load_synthetic_embedder(spec));
}

std::vector<Video> read_videos(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("view_", 0) == 0 && e.path().extension() == ".4leg") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no view_<id>.4leg videos in " + dir.string());
    std::vector<Video> out;
    for (const auto& f : files) out.push_back(read_video(f, f.stem().string().substr(5)));
    return out;
}

/// Codec from --codec, else <scene>/codec when present.
std::optional<CodecParams> find_codec(const std::string& flag, const fs::path& scene_dir) {
    if (!flag.empty()) return load_codec(flag);
    if (fs::exists(scene_dir / "codec" / "codec.json")) return load_codec(scene_dir / "codec");
    return std::nullopt;
}

/// Dictionary from --dictionary, else queries.json beside or above the scene.
std::optional<fs::path> find_dictionary(const std::string& flag, const fs::path& scene_dir) {
    if (!flag.empty()) return fs::path(flag);
    for (const fs::path& p : {scene_dir / "queries.json", scene_dir.parent_path() / "queries.json"})
        if (fs::exists(p)) return p;
    return std::nullopt;
}

QueryEmbedding query_from(const std::string& text, const std::string& embedding, const TextResolver& resolver) {
    if (!embedding.empty()) {
        const Tensor t = read_tensor(embedding);
        if (t.dtype != DType::F32) throw ValidationError("query embedding blob must be f32");
        return make_query(Eigen::Map<const Eigen::VectorXf>(t.f32.data(), static_cast<Eigen::Index>(t.f32.size())));
    }
    return resolver.query(text);
}

json segments_json(const Localization& loc) {
    json segs = json::array();
    for (const auto& s : loc.segments) segs.push_back({{"t_start", s.t_start}, {"t_end", s.t_end}, {"peak", s.peak}});
    return segs;
}

} // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"legs4: language-embedded dynamic Gaussian splatting"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Expand all help");
    Settings s;
    std::string config_path;
    uint64_t seed = 0;
    app.add_option("--seed", seed, "Random seed")->default_val(0);
    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic workspace");
    SynthSpec sspec;
    std::string synth_out;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--M", sspec.M, "Gaussians")->default_val(sspec.M);
    synth->add_option("--T", sspec.T, "Timesteps")->default_val(sspec.T);
    synth->add_option("--views", sspec.views, "Cameras")->default_val(sspec.views);
    synth->add_option("--size", sspec.width, "Image side in pixels")->default_val(sspec.width);
    synth->add_option("--D", sspec.D, "Embedding dimension")->default_val(sspec.D);
    synth->add_option("--active-start", sspec.active_start)->default_val(sspec.active_start);
    synth->add_option("--active-end", sspec.active_end)->default_val(sspec.active_end);

    // extract
    auto* extract = app.add_subcommand("extract", "Extract pixel-aligned feature maps from videos");
    std::string ex_videos, ex_embedder, ex_out, ex_agg;
    int ex_dim = 0, ex_side = 0, ex_single = -1;
    bool ex_resume = false;
    extract->add_option("--videos", ex_videos, "Directory of view_<id>.4leg videos")->required();
    extract->add_option("--embedder", ex_embedder, "Embedder JSON (synthetic or dictionary) or http(s) URL")->required();
    extract->add_option("--out", ex_out, "Output directory for feat_<view>_<t>.4leg")->required();
    extract->add_option("--dim", ex_dim, "Feature dimension (HTTP embedder)");
    extract->add_option("--input-side", ex_side, "Crop resample side (HTTP embedder)");
    extract->add_option("--aggregation", ex_agg, "average | concat | single");
    extract->add_option("--scale-index", ex_single, "Scale used by single aggregation");
    extract->add_flag("--resume", ex_resume, "Reuse maps already in --out");

    // train-codec
    auto* train = app.add_subcommand("train-codec", "Train the per-scene autoencoder");
    std::string tc_maps, tc_out;
    int tc_d = 0, tc_steps = 0, tc_batch = 0;
    train->add_option("--maps", tc_maps, "Feature map directory")->required();
    train->add_option("--out", tc_out, "Codec output directory")->required();
    train->add_option("--d", tc_d, "Latent dimension");
    train->add_option("--steps", tc_steps, "Adam steps");
    train->add_option("--batch", tc_batch, "Vectors per step");

    // distill
    auto* distill = app.add_subcommand("distill", "Distill latent features onto a scene");
    std::string di_scene, di_maps, di_codec, di_out;
    int di_iters = -1;
    bool di_no_attention = false;
    distill->add_option("--scene", di_scene, "Scene directory")->required();
    distill->add_option("--maps", di_maps, "Feature map directory")->required();
    distill->add_option("--codec", di_codec, "Codec directory (omit if maps are already latent)");
    distill->add_option("--out", di_out, "Output scene directory")->required();
    distill->add_option("--iterations", di_iters, "Adam iterations per timestep");
    distill->add_flag("--no-attention", di_no_attention, "Distill without kNN attention");

    // query
    auto* query = app.add_subcommand("query", "Localise a text query in time");
    std::string q_scene, q_codec, q_text, q_emb, q_dict;
    int q_dilation = -1;
    query->add_option("--scene", q_scene, "Distilled scene directory")->required();
    query->add_option("--codec", q_codec, "Codec directory (default <scene>/codec)");
    auto* q_text_opt = query->add_option("--text", q_text, "Query text");
    auto* q_emb_opt = query->add_option("--embedding", q_emb, "Query vector blob");
    q_text_opt->excludes(q_emb_opt);
    query->add_option("--dictionary", q_dict, "Query dictionary JSON");
    query->add_option("--dilation", q_dilation, "Dilation radius");

    // localize
    auto* loc_cmd = app.add_subcommand("localize", "Segments from an s-curve (JSON array)");
    std::string l_curve;
    int l_dilation = -1;
    loc_cmd->add_option("--curve", l_curve, "JSON file with an array of s_t")->required();
    loc_cmd->add_option("--dilation", l_dilation, "Dilation radius");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Run the benchmark over annotations");
    std::string e_scene, e_codec, e_ann, e_out, e_dict;
    int e_dilation = -1;
    eval->add_option("--scene", e_scene, "Distilled scene directory")->required();
    eval->add_option("--codec", e_codec, "Codec directory (default <scene>/codec)");
    eval->add_option("--annotations", e_ann, "Annotation root")->required();
    eval->add_option("--out", e_out, "Report path prefix (writes .csv and .json)");
    eval->add_option("--dictionary", e_dict, "Query dictionary JSON");
    eval->add_option("--dilation", e_dilation, "Dilation radius (default 0)");

    // highlight
    auto* hl = app.add_subcommand("highlight", "Render a text-driven highlight");
    std::string h_scene, h_codec, h_text, h_emb, h_dict, h_out, h_effect = "zoom";
    HighlightSpec hspec;
    hl->add_option("--scene", h_scene, "Distilled scene directory")->required();
    hl->add_option("--codec", h_codec, "Codec directory (default <scene>/codec)");
    auto* h_text_opt = hl->add_option("--text", h_text, "Query text");
    auto* h_emb_opt = hl->add_option("--embedding", h_emb, "Query vector blob");
    h_text_opt->excludes(h_emb_opt);
    hl->add_option("--dictionary", h_dict, "Query dictionary JSON");
    hl->add_option("--effect", h_effect, "zoom | bullet_time | desaturate")->default_val(h_effect);
    hl->add_option("--factor", hspec.zoom_factor, "Zoom factor")->default_val(hspec.zoom_factor);
    hl->add_option("--frames", hspec.frame_count, "Bullet-time frame count")->default_val(hspec.frame_count);
    hl->add_option("--degrees", hspec.orbit_degrees, "Bullet-time orbit")->default_val(hspec.orbit_degrees);
    hl->add_option("--strength", hspec.strength, "Desaturation strength")->default_val(hspec.strength);
    hl->add_option("--out", h_out, "Output directory")->required();

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP query service");
    std::string sv_scenes, sv_dict, sv_host = "127.0.0.1";
    int sv_port = 8080;
    serve->add_option("--scenes", sv_scenes, "Directory of scene directories")->required();
    serve->add_option("--dictionary", sv_dict, "Query dictionary JSON");
    serve->add_option("--port", sv_port, "Port")->default_val(sv_port);
    serve->add_option("--host", sv_host, "Bind address")->default_val(sv_host);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (!config_path.empty()) apply_config(s, config_path);
        s.seed = seed;

        if (*synth) {
            sspec.height = sspec.width;
            sspec.seed = s.seed;
            write_synth_workspace(synth_out, sspec);
            std::cout << "wrote synthetic workspace to " << synth_out << '\n';
        } else if (*extract) {
            if (!ex_agg.empty()) s.pyramid.aggregation = parse_aggregation(ex_agg);
            if (ex_single >= 0) s.pyramid.single_index = ex_single;
            auto embedder = open_embedder(ex_embedder, ex_dim, ex_side);
            const auto videos = read_videos(ex_videos);
            ExtractOptions opts;
            opts.out_dir = fs::path(ex_out);
            opts.resume = ex_resume;
            const auto maps = extract_maps(videos, *embedder, s.pyramid, opts);
            std::cout << "wrote " << maps.size() << " feature maps to " << ex_out << '\n';
        } else if (*train) {
            if (tc_steps > 0) s.codec.steps = tc_steps;
            if (tc_batch > 0) s.codec.batch_size = tc_batch;
            if (tc_d > 0) s.latent_dim = tc_d;
            s.codec.seed = s.seed;
            const auto maps = read_feature_maps(tc_maps);
            const CodecParams codec = train_codec(stack_feature_rows(maps), s.latent_dim, s.codec);
            save_codec(codec, tc_out);
            std::cout << "codec " << codec.D << " -> " << codec.d << ", final loss " << codec.final_loss << '\n';
        } else if (*distill) {
            if (di_iters >= 0) s.distill.iterations = di_iters;
            if (di_no_attention) s.distill.attention = false;
            s.distill.seed = s.seed;
            const DynamicScene scene = load_scene(di_scene);
            const auto maps = read_feature_maps(di_maps);
            std::optional<CodecParams> codec;
            if (!di_codec.empty()) codec = load_codec(di_codec);
            const DistillReport report = distill_scene(scene, maps, codec ? &*codec : nullptr, s.distill);
            for (const auto& [t, trace] : report.loss_traces)
                write_loss_trace(fs::path(di_out) / "traces" / ("distill_" + std::to_string(t) + ".csv"), trace);
            for (const auto& [t, err] : report.failures) std::cerr << "t=" << t << ": " << err << '\n';
            if (!report.failures.empty()) {
                std::cerr << report.failures.size() << " timestep(s) failed; scene not written\n";
                return 2;
            }
            save_scene(report.scene, di_out);
            if (codec) save_codec(*codec, fs::path(di_out) / "codec");
            std::cout << "distilled " << scene.T() << " timesteps into " << di_out << '\n';
        } else if (*query) {
            if (q_text.empty() == q_emb.empty()) throw ValidationError("exactly one of --text and --embedding is required");
            if (q_dilation >= 0) s.query.dilation = q_dilation;
            const DynamicScene scene = load_scene(q_scene);
            const auto codec = find_codec(q_codec, q_scene);
            const TextResolver resolver = TextResolver::from_environment(find_dictionary(q_dict, q_scene));
            const QueryEmbedding q = query_from(q_text, q_emb, resolver);
            const CanonicalSet canon = resolver.canonicals(s.canonicals);
            const RelevancyVolume vol = temporal_curve(scene, codec ? &*codec : nullptr, q, canon, s.query);
            const Localization loc = localize(vol, s.query.dilation);
            json out{{"s_curve", vol.s}, {"rel_avg", vol.rel_avg}, {"threshold", vol.k}, {"segments", segments_json(loc)}};
            out["primary"] = loc.primary ? json{{"t_start", loc.primary->t_start}, {"t_end", loc.primary->t_end},
                                                {"peak", loc.primary->peak}}
                                         : json(nullptr);
            std::cout << out.dump(2) << '\n';
        } else if (*loc_cmd) {
            if (l_dilation >= 0) s.query.dilation = l_dilation;
            std::ifstream in(l_curve);
            if (!in) throw IoError("missing file: " + l_curve);
            const auto curve = json::parse(in).get<std::vector<double>>();
            const Localization loc = localize(curve, s.query.dilation);
            std::cout << json{{"segments", segments_json(loc)}}.dump(2) << '\n';
        } else if (*eval) {
            EngineConfig cfg;
            cfg.query = s.query;
            cfg.query.dilation = e_dilation >= 0 ? e_dilation : 0;
            cfg.canonical_phrases = s.canonicals;
            const DynamicScene scene = load_scene(e_scene);
            const auto codec = find_codec(e_codec, e_scene);
            const TextResolver resolver = TextResolver::from_environment(find_dictionary(e_dict, e_scene));
            std::vector<std::string> problems;
            const auto anns = load_annotations(e_ann, scene.manifest.name, &problems);
            std::map<std::string, BenchmarkScene> scenes{
                {scene.manifest.name, {&scene, codec ? &*codec : nullptr, fs::path(e_ann) / scene.manifest.name}}};
            MetricReport report = run_benchmark(scenes, anns, resolver, cfg);
            report.problems.insert(report.problems.begin(), problems.begin(), problems.end());
            const fs::path prefix = e_out.empty() ? fs::path("report") : fs::path(e_out);
            write_report_csv(prefix.string() + ".csv", report);
            write_report_json(prefix.string() + ".json", report);
            for (const auto& a : report.aggregates)
                std::cout << a.scene << " / " << a.query << ": vAP " << 100 * a.vap.mean << " +- " << 100 * a.vap.std
                          << ", vIoU " << 100 * a.viou.mean << ", tIoU " << 100 * a.tiou.mean << '\n';
            for (const auto& p : report.problems) std::cerr << "problem: " << p << '\n';
        } else if (*hl) {
            if (h_text.empty() == h_emb.empty()) throw ValidationError("exactly one of --text and --embedding is required");
            hspec.effect = parse_effect(h_effect);
            const DynamicScene scene = load_scene(h_scene);
            const auto codec = find_codec(h_codec, h_scene);
            const TextResolver resolver = TextResolver::from_environment(find_dictionary(h_dict, h_scene));
            const QueryEmbedding q = query_from(h_text, h_emb, resolver);
            const Highlight h = render_highlight(scene, codec ? &*codec : nullptr, q, resolver.canonicals(s.canonicals),
                                                 hspec, s.query);
            write_highlight(fs::path(h_out) / "highlight", h);
            std::cout << "wrote " << h.frames.size() << " frames to " << (fs::path(h_out) / "highlight").string() << '\n';
        } else if (*serve) {
            QueryService service(load_scene_registry(sv_scenes),
                                 TextResolver::from_environment(sv_dict.empty() ? std::nullopt
                                                                                : std::optional<fs::path>(sv_dict)),
                                 s.query);
            httplib::Server server;
            service.bind(server);
            std::cout << "serving on http://" << sv_host << ':' << sv_port << '\n' << std::flush;
            if (!server.listen(sv_host, sv_port)) throw Error("cannot listen on " + sv_host + ":" + std::to_string(sv_port));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

} // namespace legs4
