#include "legs4/service.hpp"

#include "legs4/image_io.hpp"
#include "legs4/raster.hpp"
#include "legs4/rng.hpp"
#include "legs4/tensor_io.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cstdio>

namespace legs4 {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct HttpError : Error {
    HttpError(int status, const std::string& what) : Error(what), status(status) {}
    int status;
};

HttpResult json_result(const json& j, int status = 200) { return {status, "application/json", j.dump()}; }

HttpResult error_result(int status, const std::string& message) {
    return json_result(json{{"error", message}}, status);
}

template <typename F>
HttpResult guarded(F&& f) {
    try {
        return f();
    } catch (const HttpError& e) {
        return error_result(e.status, e.what());
    } catch (const ValidationError& e) {
        return error_result(400, e.what());
    } catch (const QueryNotFound& e) {
        return error_result(409, e.what());
    } catch (const json::exception& e) {
        return error_result(400, std::string("malformed request: ") + e.what());
    } catch (const std::exception& e) {
        return error_result(500, e.what());
    }
}

const std::string& param(const Params& p, const std::string& key) {
    const auto it = p.find(key);
    if (it == p.end()) throw HttpError(400, "missing parameter '" + key + "'");
    return it->second;
}

int int_param(const Params& p, const std::string& key) {
    const std::string& v = param(p, key);
    try {
        size_t used = 0;
        const int x = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw HttpError(400, "parameter '" + key + "' must be an integer");
    }
}

std::string hex64(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

template <typename T>
uint64_t hash_span(std::span<const T> data, uint64_t h) {
    return fnv1a64({reinterpret_cast<const uint8_t*>(data.data()), data.size_bytes()}, h);
}

json segment_json(const Segment& s) { return {{"t_start", s.t_start}, {"t_end", s.t_end}, {"peak", s.peak}}; }

std::string blob_body(const Tensor& t) {
    const auto bytes = encode_tensor(t);
    return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

} // namespace

std::vector<ServiceScene> load_scene_registry(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("scene directory not found: " + dir.string());
    std::vector<fs::path> entries;
    if (fs::exists(dir / "scene.json")) entries.push_back(dir);
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory() && fs::exists(e.path() / "scene.json")) entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());
    std::vector<ServiceScene> out;
    for (const auto& p : entries) {
        ServiceScene s;
        s.scene = load_scene(p);
        s.id = p == dir ? s.scene.manifest.name : p.filename().string();
        if (fs::exists(p / "codec" / "codec.json")) s.codec = load_codec(p / "codec");
        out.push_back(std::move(s));
    }
    if (out.empty()) throw IoError("no scenes under " + dir.string());
    return out;
}

QueryService::QueryService(std::vector<ServiceScene> scenes, TextResolver resolver, QueryOptions options)
    : scenes_(std::move(scenes)), resolver_(std::move(resolver)), options_(options) {
    if (scenes_.empty()) throw ValidationError("service needs at least one scene");
}

QueryService::~QueryService() {
    std::map<std::string, std::shared_ptr<Job>> jobs;
    {
        std::lock_guard lock(mutex_);
        jobs = jobs_;
    }
    for (auto& [id, job] : jobs) job->result.wait();
}

size_t QueryService::scene_index(const std::string& id) const {
    for (size_t i = 0; i < scenes_.size(); ++i)
        if (scenes_[i].id == id) return i;
    throw HttpError(404, "unknown scene '" + id + "'");
}

const CodecParams* QueryService::codec(size_t scene) const {
    return scenes_[scene].codec ? &*scenes_[scene].codec : nullptr;
}

std::shared_ptr<const QueryService::QueryRecord> QueryService::find_query(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = cache_.find(id);
    if (it == cache_.end()) throw HttpError(404, "unknown query id '" + id + "'");
    return it->second;
}

HttpResult QueryService::health() const { return json_result({{"status", "ok"}, {"scenes", scenes_.size()}}); }

HttpResult QueryService::scenes() const {
    json arr = json::array();
    for (const auto& s : scenes_) {
        json cams = json::array();
        for (const auto& c : s.scene.cameras)
            cams.push_back({{"id", c.id}, {"width", c.width}, {"height", c.height}});
        arr.push_back({{"id", s.id},
                       {"T", s.scene.T()},
                       {"M", s.scene.M()},
                       {"d", s.scene.d},
                       {"fps", s.scene.manifest.fps},
                       {"distilled", s.scene.distilled()},
                       {"cameras", cams}});
    }
    return json_result({{"scenes", arr}});
}

HttpResult QueryService::query(const std::string& body) {
    return guarded([&] {
        const json req = json::parse(body);
        if (!req.is_object()) throw HttpError(400, "request body must be a JSON object");
        const bool has_text = req.contains("text") && !req["text"].is_null();
        const bool has_vec = req.contains("embedding") && !req["embedding"].is_null();
        if (has_text == has_vec) throw HttpError(400, "exactly one of 'text' and 'embedding' is required");

        std::vector<size_t> candidates;
        if (req.contains("scenes")) {
            for (const auto& id : req["scenes"]) candidates.push_back(scene_index(id.get<std::string>()));
            if (candidates.empty()) throw HttpError(400, "'scenes' is empty");
        } else {
            candidates.push_back(scene_index(req.at("scene").get<std::string>()));
        }

        QueryEmbedding q;
        try {
            if (has_text) {
                q = resolver_.query(req["text"].get<std::string>());
            } else {
                const auto v = req["embedding"].get<std::vector<float>>();
                q = make_query(Eigen::Map<const Eigen::VectorXf>(v.data(), static_cast<Eigen::Index>(v.size())));
            }
        } catch (const ValidationError&) {
            throw;
        } catch (const json::exception&) {
            throw;
        } catch (const std::exception& e) {
            throw HttpError(400, e.what());
        }

        CanonicalSet canon;
        if (req.contains("canonical_vectors")) {
            const auto rows = req["canonical_vectors"].get<std::vector<std::vector<float>>>();
            if (rows.empty()) throw HttpError(400, "'canonical_vectors' is empty");
            MatrixXfR m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
            for (size_t i = 0; i < rows.size(); ++i) {
                if (rows[i].size() != rows[0].size()) throw HttpError(400, "canonical vectors differ in length");
                for (size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
            }
            canon = make_canonicals({}, m);
        } else {
            try {
                canon = resolver_.canonicals(req.contains("canonicals")
                                                 ? req["canonicals"].get<std::vector<std::string>>()
                                                 : CanonicalSet::default_phrases());
            } catch (const ValidationError&) {
                throw;
            } catch (const std::exception& e) {
                throw HttpError(400, e.what());
            }
        }
        if (canon.vectors.cols() != q.vector.size()) throw HttpError(400, "query and canonical dimensions differ");
        QueryOptions opts = options_;
        if (req.contains("dilation")) opts.dilation = req["dilation"].get<int>();
        if (opts.dilation < 0) throw HttpError(400, "dilation must be >= 0");

        size_t chosen = candidates.front();
        json scene_scores = nullptr;
        if (candidates.size() > 1) {
            std::vector<const DynamicScene*> sp;
            std::vector<const CodecParams*> cp;
            for (size_t i : candidates) {
                sp.push_back(&scenes_[i].scene);
                cp.push_back(codec(i));
            }
            const SceneSelection sel = select_scene(sp, cp, q, canon, 10, opts);
            chosen = candidates[static_cast<size_t>(sel.index)];
            scene_scores = json::object();
            for (size_t i = 0; i < candidates.size(); ++i) scene_scores[scenes_[candidates[i]].id] = sel.scores[i];
        }

        uint64_t h = fnv1a64({reinterpret_cast<const uint8_t*>(scenes_[chosen].id.data()), scenes_[chosen].id.size()});
        h = hash_span(std::span<const float>(q.vector.data(), static_cast<size_t>(q.vector.size())), h);
        h = hash_span(std::span<const float>(canon.vectors.data(), static_cast<size_t>(canon.vectors.size())), h);
        const int32_t dil = opts.dilation;
        h = hash_span(std::span<const int32_t>(&dil, 1), h);
        const std::string id = hex64(h);

        std::shared_ptr<const QueryRecord> rec;
        {
            std::lock_guard lock(mutex_);
            if (const auto it = cache_.find(id); it != cache_.end()) rec = it->second;
        }
        if (!rec) {
            auto r = std::make_shared<QueryRecord>();
            r->id = id;
            r->scene = chosen;
            r->q = q;
            r->canon = canon;
            const auto& scene = scenes_[chosen].scene;
            if (!scene.distilled()) throw HttpError(409, "scene '" + scenes_[chosen].id + "' has no latent features");
            if ((codec(chosen) ? codec(chosen)->D : scene.d) % q.vector.size() != 0)
                throw HttpError(400, "query dimension does not match the scene's feature space");
            r->volume = temporal_curve(scene, codec(chosen), q, canon, opts);
            r->loc = localize(r->volume, opts.dilation);
            json segs = json::array();
            for (const auto& s : r->loc.segments) segs.push_back(segment_json(s));
            json resp{{"query_id", id},
                      {"scene", scenes_[chosen].id},
                      {"s_curve", r->volume.s},
                      {"rel_avg", r->volume.rel_avg},
                      {"threshold", r->volume.k},
                      {"segments", segs},
                      {"primary", r->loc.primary ? segment_json(*r->loc.primary) : json(nullptr)}};
            if (!scene_scores.is_null()) resp["scene_scores"] = scene_scores;
            r->response = resp.dump();
            std::lock_guard lock(mutex_);
            rec = cache_.emplace(id, std::move(r)).first->second;  // first insert wins
        }
        return HttpResult{200, "application/json", rec->response};
    });
}

HttpResult QueryService::render(const Params& params) const {
    return guarded([&] {
        const size_t si = scene_index(param(params, "scene"));
        const auto& scene = scenes_[si].scene;
        const int t = int_param(params, "t");
        if (t < 0 || t >= scene.T()) throw HttpError(400, "t out of range");
        const auto cam_it = params.count("camera") ? params.find("camera")->second : scene.cameras.front().id;
        const auto cam = std::find_if(scene.cameras.begin(), scene.cameras.end(),
                                      [&](const Camera& c) { return c.id == cam_it; });
        if (cam == scene.cameras.end()) throw HttpError(404, "unknown camera '" + cam_it + "'");
        const std::string mode = params.count("mode") ? params.find("mode")->second : "rgb";
        std::vector<uint8_t> rgb;
        if (mode == "rgb") {
            rgb = to_rgb8(legs4::render(scene.frames[static_cast<size_t>(t)], *cam, kRgb).rgb);
        } else if (mode == "relevancy") {
            const auto rec = find_query(param(params, "query_id"));
            if (rec->scene != si) throw HttpError(400, "query_id belongs to another scene");
            const SpatialMap m = spatial_map(scene, t, *cam, codec(si), rec->q, rec->canon, options_.tile);
            rgb.resize(static_cast<size_t>(m.scores.size()) * 3);
            for (Eigen::Index p = 0; p < m.scores.size(); ++p) {
                const auto c = turbo(m.scores[p]);
                std::copy(c.begin(), c.end(), rgb.begin() + p * 3);
            }
        } else {
            throw HttpError(400, "mode must be rgb or relevancy");
        }
        const auto png = encode_png(cam->width, cam->height, rgb);
        return HttpResult{200, "image/png", std::string(png.begin(), png.end())};
    });
}

HttpResult QueryService::depth(const Params& params) const {
    return guarded([&] {
        const size_t si = scene_index(param(params, "scene"));
        const auto& scene = scenes_[si].scene;
        const int t = int_param(params, "t");
        if (t < 0 || t >= scene.T()) throw HttpError(400, "t out of range");
        const std::string cid = params.count("camera") ? params.find("camera")->second : scene.cameras.front().id;
        const auto cam = std::find_if(scene.cameras.begin(), scene.cameras.end(),
                                      [&](const Camera& c) { return c.id == cid; });
        if (cam == scene.cameras.end()) throw HttpError(404, "unknown camera '" + cid + "'");
        const auto r = legs4::render(scene.frames[static_cast<size_t>(t)], *cam, kDepth);
        const Eigen::VectorXf d = r.normalized_depth();
        return HttpResult{200, "application/octet-stream",
                          blob_body(Tensor::from_f32({static_cast<uint64_t>(cam->height), static_cast<uint64_t>(cam->width)},
                                                     std::vector<float>(d.data(), d.data() + d.size())))};
    });
}

HttpResult QueryService::relevancy(const Params& params) const {
    return guarded([&] {
        const auto rec = find_query(param(params, "query_id"));
        const auto& scene = scenes_[rec->scene].scene;
        const int t = int_param(params, "t");
        if (t < 0 || t >= scene.T()) throw HttpError(400, "t out of range");
        const std::string cid = params.count("camera") ? params.find("camera")->second : scene.cameras.front().id;
        const auto cam = std::find_if(scene.cameras.begin(), scene.cameras.end(),
                                      [&](const Camera& c) { return c.id == cid; });
        if (cam == scene.cameras.end()) throw HttpError(404, "unknown camera '" + cid + "'");
        const SpatialMap m = spatial_map(scene, t, *cam, codec(rec->scene), rec->q, rec->canon, options_.tile);
        return HttpResult{200, "application/octet-stream",
                          blob_body(Tensor::from_f32({static_cast<uint64_t>(m.height), static_cast<uint64_t>(m.width)},
                                                     std::vector<float>(m.scores.data(), m.scores.data() + m.scores.size())))};
    });
}

HttpResult QueryService::start_highlight(const std::string& body) {
    return guarded([&] {
        const json req = json::parse(body);
        const auto rec = find_query(req.at("query_id").get<std::string>());
        HighlightSpec spec;
        spec.effect = parse_effect(req.value("effect", std::string("zoom")));
        spec.zoom_factor = req.value("zoom_factor", spec.zoom_factor);
        spec.orbit_degrees = req.value("orbit_degrees", spec.orbit_degrees);
        spec.frame_count = req.value("frame_count", spec.frame_count);
        spec.strength = req.value("strength", spec.strength);
        spec.width = req.value("width", 0);
        spec.height = req.value("height", 0);
        spec.validate();
        if (!rec->loc.primary) throw QueryNotFound();

        auto job = std::make_shared<Job>();
        QueryOptions opts = options_;
        opts.dilation = 0;
        // reuse the cached localization rather than recomputing it
        const Segment seg = *rec->loc.primary;
        const DynamicScene* scene = &scenes_[rec->scene].scene;
        const CodecParams* cp = codec(rec->scene);
        job->result = std::async(std::launch::async, [scene, cp, rec, spec, seg, opts]() {
                          auto h = std::make_shared<Highlight>();
                          *h = render_highlight_segment(*scene, cp, rec->q, rec->canon, spec, seg, opts);
                          return h;
                      }).share();
        std::lock_guard lock(mutex_);
        const std::string id = "job-" + std::to_string(next_job_++);
        jobs_[id] = job;
        return json_result({{"job_id", id}}, 202);
    });
}

HttpResult QueryService::highlight_status(const std::string& id) const {
    return guarded([&] {
        std::shared_ptr<Job> job;
        {
            std::lock_guard lock(mutex_);
            const auto it = jobs_.find(id);
            if (it == jobs_.end()) throw HttpError(404, "unknown highlight job '" + id + "'");
            job = it->second;
        }
        if (job->result.wait_for(std::chrono::seconds(0)) != std::future_status::ready)
            return json_result({{"job_id", id}, {"status", "running"}});
        try {
            const auto h = job->result.get();
            json frames = json::array();
            for (size_t i = 0; i < h->frames.size(); ++i)
                frames.push_back({{"index", i}, {"t", h->frames[i].t}, {"url", "/highlight/" + id + "/frame/" + std::to_string(i)}});
            return json_result({{"job_id", id},
                                {"status", "done"},
                                {"effect", effect_name(h->spec.effect)},
                                {"segment", segment_json(h->segment)},
                                {"source_camera", h->view.source},
                                {"frames", frames}});
        } catch (const std::exception& e) {
            return json_result({{"job_id", id}, {"status", "failed"}, {"error", e.what()}});
        }
    });
}

HttpResult QueryService::highlight_frame(const std::string& id, int index) const {
    return guarded([&] {
        std::shared_ptr<Job> job;
        {
            std::lock_guard lock(mutex_);
            const auto it = jobs_.find(id);
            if (it == jobs_.end()) throw HttpError(404, "unknown highlight job '" + id + "'");
            job = it->second;
        }
        if (job->result.wait_for(std::chrono::seconds(0)) != std::future_status::ready)
            throw HttpError(404, "highlight job still running");
        const auto h = job->result.get();
        if (index < 0 || static_cast<size_t>(index) >= h->frames.size()) throw HttpError(404, "no such frame");
        const auto& f = h->frames[static_cast<size_t>(index)];
        const auto png = encode_png(f.width, f.height, f.rgb);
        return HttpResult{200, "image/png", std::string(png.begin(), png.end())};
    });
}

void QueryService::wait_for_job(const std::string& id) const {
    std::shared_ptr<Job> job;
    {
        std::lock_guard lock(mutex_);
        const auto it = jobs_.find(id);
        if (it == jobs_.end()) throw Error("unknown highlight job '" + id + "'");
        job = it->second;
    }
    job->result.wait();
}

void QueryService::bind(httplib::Server& server) {
    auto send = [](httplib::Response& res, const HttpResult& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    auto params_of = [](const httplib::Request& req) {
        Params p;
        for (const auto& [k, v] : req.params) p[k] = v;
        return p;
    };
    server.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    server.Get("/scenes", [this, send](const httplib::Request&, httplib::Response& res) { send(res, scenes()); });
    server.Post("/query", [this, send](const httplib::Request& req, httplib::Response& res) { send(res, query(req.body)); });
    server.Get("/render", [this, send, params_of](const httplib::Request& req, httplib::Response& res) {
        send(res, render(params_of(req)));
    });
    server.Get("/depth", [this, send, params_of](const httplib::Request& req, httplib::Response& res) {
        send(res, depth(params_of(req)));
    });
    server.Get("/relevancy", [this, send, params_of](const httplib::Request& req, httplib::Response& res) {
        send(res, relevancy(params_of(req)));
    });
    server.Post("/highlight", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, start_highlight(req.body));
    });
    server.Get(R"(/highlight/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, highlight_status(req.matches[1]));
    });
    server.Get(R"(/highlight/([^/]+)/frame/(\d+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, highlight_frame(req.matches[1], std::stoi(req.matches[2])));
    });
}

} // namespace legs4
