#include "legs4/service.hpp"
#include "legs4/tensor_io.hpp"
#include "support.hpp"

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>

#include <thread>

using namespace legs4;
using json = nlohmann::json;

namespace {

struct ServiceFixture : ::testing::Test {
    static void SetUpTestSuite() {
        auto [scene, gt] = legs4::testing::oracle_scene();
        q = gt.concept_embeddings.row(1).transpose();
        body = gt.concept_embeddings.row(0).transpose();
        TextResolver resolver;
        resolver.add("cluster", q);
        for (size_t i = 0; i < 4; ++i)
            resolver.add(CanonicalSet::default_phrases()[i], gt.canonical_vectors.row(Eigen::Index(i)).transpose());
        auto bare = synth_scene(legs4::testing::small_spec()).first;
        std::vector<ServiceScene> scenes;
        scenes.push_back({"synthetic", std::move(scene), std::nullopt});
        scenes.push_back({"raw", std::move(bare), std::nullopt});
        service = new QueryService(std::move(scenes), std::move(resolver));
    }
    static void TearDownTestSuite() {
        delete service;
        service = nullptr;
    }

    static std::vector<float> vec(const Eigen::VectorXf& v) { return {v.data(), v.data() + v.size()}; }

    static json query_ok(const json& req) {
        const auto r = service->query(req.dump());
        EXPECT_EQ(r.status, 200) << r.body;
        return json::parse(r.body);
    }

    static inline QueryService* service = nullptr;
    static inline Eigen::VectorXf q, body;
};

} // namespace

TEST_F(ServiceFixture, HealthAndScenes) {
    EXPECT_EQ(service->health().status, 200);
    const auto j = json::parse(service->scenes().body);
    ASSERT_EQ(j["scenes"].size(), 2u);
    EXPECT_EQ(j["scenes"][0]["id"], "synthetic");
    EXPECT_EQ(j["scenes"][0]["T"], 12);
    EXPECT_EQ(j["scenes"][0]["cameras"].size(), 3u);
}

TEST_F(ServiceFixture, TextAndEmbeddingTogetherIs400) {
    const json req{{"scene", "synthetic"}, {"text", "cluster"}, {"embedding", vec(q)}};
    EXPECT_EQ(service->query(req.dump()).status, 400);
    EXPECT_EQ(service->query(json{{"scene", "synthetic"}}.dump()).status, 400);
    EXPECT_EQ(service->query("{oops").status, 400);
    EXPECT_EQ(service->query(json{{"scene", "synthetic"}, {"embedding", {1.0, 2.0}}}.dump()).status, 400);
}

TEST_F(ServiceFixture, UnknownSceneIs404) {
    EXPECT_EQ(service->query(json{{"scene", "nope"}, {"text", "cluster"}}.dump()).status, 404);
    EXPECT_EQ(service->render({{"scene", "nope"}, {"t", "0"}}).status, 404);
    EXPECT_EQ(service->render({{"scene", "synthetic"}, {"t", "0"}, {"camera", "zz"}}).status, 404);
}

TEST_F(ServiceFixture, UnknownQueryIdIs404) {
    const auto r = service->render({{"scene", "synthetic"}, {"t", "3"}, {"mode", "relevancy"}, {"query_id", "feed"}});
    EXPECT_EQ(r.status, 404);
    EXPECT_EQ(service->relevancy({{"query_id", "feed"}, {"t", "0"}}).status, 404);
    EXPECT_EQ(service->start_highlight(json{{"query_id", "feed"}}.dump()).status, 404);
}

TEST_F(ServiceFixture, PlantedQueryLocalizes) {
    const auto j = query_ok({{"scene", "synthetic"}, {"embedding", vec(q)}, {"dilation", 0}});
    ASSERT_FALSE(j["primary"].is_null());
    std::set<int> pred;
    for (const auto& s : j["segments"])
        for (int t = s["t_start"]; t <= s["t_end"].get<int>(); ++t) pred.insert(t);
    std::set<int> gt{4, 5, 6, 7};
    std::set<int> inter, uni = gt;
    for (int t : pred) {
        if (gt.count(t)) inter.insert(t);
        uni.insert(t);
    }
    EXPECT_GE(double(inter.size()) / double(uni.size()), 0.8);
    EXPECT_EQ(j["s_curve"].size(), 12u);
    EXPECT_NEAR(j["threshold"].get<double>(), 1.0 / 12.0, 1e-12);
}

TEST_F(ServiceFixture, IdenticalRequestsIdenticalResponses) {
    const json req{{"scene", "synthetic"}, {"text", "cluster"}};
    const auto a = service->query(req.dump());
    const auto b = service->query(req.dump());
    EXPECT_EQ(a.body, b.body);
    // the text and the raw vector resolve to the same cache entry
    const auto c = query_ok({{"scene", "synthetic"}, {"embedding", vec(q)}});
    EXPECT_EQ(json::parse(a.body)["query_id"], c["query_id"]);
    const auto d = query_ok({{"scene", "synthetic"}, {"embedding", vec(q)}, {"dilation", 1}});
    EXPECT_NE(d["query_id"], c["query_id"]);
}

TEST_F(ServiceFixture, ConcurrentQueriesMatchSerial) {
    std::vector<json> reqs;
    for (int dil = 0; dil < 4; ++dil) reqs.push_back({{"scene", "synthetic"}, {"embedding", vec(dil % 2 ? body : q)}, {"dilation", dil}});
    std::vector<std::string> serial;
    for (const auto& r : reqs) serial.push_back(service->query(r.dump()).body);
    std::vector<std::string> parallel(reqs.size());
    std::vector<std::thread> threads;
    for (size_t i = 0; i < reqs.size(); ++i)
        threads.emplace_back([&, i] { parallel[i] = service->query(reqs[i].dump()).body; });
    for (auto& t : threads) t.join();
    EXPECT_EQ(parallel, serial);
}

TEST_F(ServiceFixture, RendersAndBlobs) {
    const auto j = query_ok({{"scene", "synthetic"}, {"embedding", vec(q)}, {"dilation", 0}});
    const std::string id = j["query_id"];
    const auto rgb = service->render({{"scene", "synthetic"}, {"t", "5"}, {"camera", "1"}});
    EXPECT_EQ(rgb.status, 200) << rgb.body;
    EXPECT_EQ(rgb.content_type, "image/png");
    const auto rel = service->render({{"scene", "synthetic"}, {"t", "5"}, {"mode", "relevancy"}, {"query_id", id}});
    EXPECT_EQ(rel.status, 200) << rel.body;
    const auto raw = service->relevancy({{"query_id", id}, {"t", "5"}});
    ASSERT_EQ(raw.status, 200);
    const auto tensor = decode_tensor({reinterpret_cast<const uint8_t*>(raw.body.data()), raw.body.size()});
    EXPECT_EQ(tensor.dims, (std::vector<uint64_t>{32, 32}));
    EXPECT_GT(*std::max_element(tensor.f32.begin(), tensor.f32.end()), 0.5f);
    const auto depth = service->depth({{"scene", "synthetic"}, {"t", "5"}});
    ASSERT_EQ(depth.status, 200);
    EXPECT_EQ(service->render({{"scene", "synthetic"}, {"t", "99"}}).status, 400);
    EXPECT_EQ(service->render({{"scene", "synthetic"}, {"t", "x"}}).status, 400);
}

TEST_F(ServiceFixture, HighlightJob) {
    const auto j = query_ok({{"scene", "synthetic"}, {"embedding", vec(q)}, {"dilation", 0}});
    const auto start =
        service->start_highlight(json{{"query_id", j["query_id"]}, {"effect", "bullet_time"}, {"frame_count", 4}}.dump());
    ASSERT_EQ(start.status, 202) << start.body;
    const std::string job = json::parse(start.body)["job_id"];
    service->wait_for_job(job);
    const auto status = json::parse(service->highlight_status(job).body);
    EXPECT_EQ(status["status"], "done");
    EXPECT_EQ(status["frames"].size(), 4u);
    EXPECT_EQ(service->highlight_frame(job, 3).status, 200);
    EXPECT_EQ(service->highlight_frame(job, 4).status, 404);
    EXPECT_EQ(service->highlight_status("job-missing").status, 404);
}

TEST_F(ServiceFixture, HighlightWithoutSegmentIs409) {
    // the negated query matches nothing
    const auto j = query_ok({{"scene", "synthetic"}, {"embedding", vec(-q)}, {"dilation", 0}});
    EXPECT_TRUE(j["segments"].empty());
    EXPECT_EQ(service->start_highlight(json{{"query_id", j["query_id"]}}.dump()).status, 409);
}

TEST_F(ServiceFixture, UndistilledSceneIs409) {
    EXPECT_EQ(service->query(json{{"scene", "raw"}, {"embedding", vec(q)}}.dump()).status, 409);
}

TEST_F(ServiceFixture, MultiSceneSelection) {
    const auto j = query_ok({{"scenes", {"synthetic"}}, {"embedding", vec(q)}});
    EXPECT_EQ(j["scene"], "synthetic");
    EXPECT_EQ(j["scene_scores"].size(), 1u);
}

TEST_F(ServiceFixture, OverHttp) {
    httplib::Server server;
    service->bind(server);
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client cli("127.0.0.1", port);
    const auto h = cli.Get("/health");
    ASSERT_TRUE(h);
    EXPECT_EQ(h->status, 200);
    const json req{{"scene", "synthetic"}, {"embedding", vec(q)}, {"dilation", 0}};
    const auto r = cli.Post("/query", req.dump(), "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    const std::string id = json::parse(r->body)["query_id"];
    const auto bad = cli.Post("/query", json{{"scene", "synthetic"}, {"text", "x"}, {"embedding", vec(q)}}.dump(),
                              "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
    const auto png = cli.Get("/render?scene=synthetic&t=5&mode=relevancy&query_id=" + id);
    ASSERT_TRUE(png);
    EXPECT_EQ(png->status, 200);
    EXPECT_EQ(png->get_header_value("Content-Type"), "image/png");
    const auto missing = cli.Get("/render?scene=synthetic&t=5&mode=relevancy&query_id=0000");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 404);
    const auto hl = cli.Post("/highlight", json{{"query_id", id}, {"effect", "desaturate"}}.dump(), "application/json");
    ASSERT_TRUE(hl);
    EXPECT_EQ(hl->status, 202);
    const std::string job = json::parse(hl->body)["job_id"];
    service->wait_for_job(job);
    const auto st = cli.Get("/highlight/" + job);
    ASSERT_TRUE(st);
    EXPECT_EQ(json::parse(st->body)["status"], "done");
    const auto fr = cli.Get("/highlight/" + job + "/frame/0");
    ASSERT_TRUE(fr);
    EXPECT_EQ(fr->status, 200);
    server.stop();
    th.join();
}
