#include "legs4/query.hpp"
#include "legs4/text_resolver.hpp"
#include "legs4/tensor_io.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <numbers>

using namespace legs4;
using legs4::testing::make_camera;
using legs4::testing::oracle_scene;

namespace {

Eigen::VectorXf vec(std::initializer_list<float> v) {
    Eigen::VectorXf out(Eigen::Index(v.size()));
    Eigen::Index i = 0;
    for (float x : v) out[i++] = x;
    return out;
}

CanonicalSet canon(std::initializer_list<Eigen::VectorXf> rows) {
    MatrixXfR m(Eigen::Index(rows.size()), rows.begin()->size());
    Eigen::Index i = 0;
    for (const auto& r : rows) m.row(i++) = r.transpose();
    return make_canonicals(std::vector<std::string>(rows.size(), "c"), m);
}

CanonicalSet scene_canonicals(const SyntheticGroundTruth& gt) {
    return make_canonicals(CanonicalSet::default_phrases(), gt.canonical_vectors);
}

} // namespace

TEST(Relevancy, Symmetric) {
    const auto q = make_query(vec({0, 1, 0}));
    EXPECT_NEAR(relevancy(vec({1, 0, 0}), q, canon({vec({0, 0, 1})})), 0.5, 1e-6);
}

TEST(Relevancy, UnitMargin) {
    const auto q = make_query(vec({1, 0, 0}));
    const double e = std::numbers::e;
    EXPECT_NEAR(relevancy(vec({1, 0, 0}), q, canon({vec({0, 1, 0}), vec({0, 0, 1})})), e / (e + 1), 1e-6);
    EXPECT_NEAR(relevancy(vec({1, 0, 0}), q, canon({vec({0, 1, 0})})), 0.731059, 1e-6);
}

TEST(Relevancy, MinPicksLargestCanonicalDot) {
    const float s75 = std::sqrt(0.75f), s96 = std::sqrt(0.96f);
    const auto q = make_query(vec({0.5f, s75, 0, 0}));
    const auto c = canon({vec({0.5f, 0, s75, 0}), vec({0.2f, 0, 0, s96})});
    EXPECT_NEAR(relevancy(vec({1, 0, 0, 0}), q, c), 0.5, 1e-6);
}

TEST(Relevancy, ScaleInvariantFeature) {
    const auto q = make_query(vec({1, 0, 0}));
    const auto c = canon({vec({0, 1, 0})});
    EXPECT_NEAR(relevancy(vec({3, 0, 0}), q, c), relevancy(vec({1, 0, 0}), q, c), 1e-7);
}

TEST(Relevancy, ConcatChunksAveraged) {
    const auto q = make_query(vec({1, 0}));
    const auto c = canon({vec({0, 1})});
    // chunk 1 matches the query, chunk 2 matches the canonical
    const double e = std::numbers::e;
    const double want = 0.5 * (e / (e + 1) + 1 / (1 + e));
    EXPECT_NEAR(relevancy(vec({1, 0, 0, 1}), q, c), want, 1e-6);
}

TEST(TemporalCurve, HandCounts) {
    MatrixXfR scores(8, 3);
    scores.col(0) << 0.95f, 0.95f, 0.1f, 0.1f, 0.1f, 0.1f, 0.1f, 0.1f;
    scores.col(1) << 0.95f, 0.95f, 0.95f, 0.95f, 0.95f, 0.95f, 0.55f, 0.55f;
    scores.col(2) << 0.95f, 0.95f, 0.55f, 0.55f, 0.55f, 0.55f, 0.55f, 0.55f;
    const auto v = volume_from_scores(scores);
    EXPECT_EQ(v.counts, (std::vector<long>{2, 6, 2}));
    ASSERT_EQ(v.s.size(), 3u);
    EXPECT_NEAR(v.s[0], 0.2, 1e-12);
    EXPECT_NEAR(v.s[1], 0.6, 1e-12);
    EXPECT_NEAR(v.s[2], 0.2, 1e-12);
    EXPECT_NEAR(v.k, 1.0 / 3.0, 1e-12);
    const auto loc = localize(v, 0);
    ASSERT_TRUE(loc.primary);
    EXPECT_EQ(*loc.primary, (Segment{1, 1, 1}));
}

TEST(TemporalCurve, AllAtFirstStep) {
    MatrixXfR scores = MatrixXfR::Constant(4, 5, 0.2f);
    scores(0, 0) = 0.9f;
    scores(1, 0) = 0.7f;
    const auto v = volume_from_scores(scores);
    EXPECT_EQ(v.s, (std::vector<double>{1, 0, 0, 0, 0}));
}

TEST(TemporalCurve, NothingRelevant) {
    const auto v = volume_from_scores(MatrixXfR::Constant(4, 5, 0.3f));
    for (double s : v.s) EXPECT_EQ(s, 0.0);
    EXPECT_TRUE(localize(v, 2).segments.empty());
    EXPECT_FALSE(localize(v, 2).primary);
}

TEST(Localize, HandCases) {
    const auto a = localize({0.2, 0.6, 0.2}, 0);
    ASSERT_EQ(a.segments.size(), 1u);
    EXPECT_EQ(a.segments[0], (Segment{1, 1, 1}));
    EXPECT_TRUE(localize({0.25, 0.25, 0.25, 0.25}, 0).segments.empty());
    EXPECT_TRUE(localize({0.25, 0.25, 0.25, 0.25}, 3).segments.empty());
    const auto b = localize({0.45, 0.1, 0.45}, 1);
    ASSERT_EQ(b.segments.size(), 1u);
    EXPECT_EQ(b.segments[0], (Segment{0, 2, 1}));
}

TEST(Localize, LongestRunWinsEarliestOnTie) {
    // T=10, k=0.1
    const std::vector<double> s{0.2, 0.2, 0, 0, 0.2, 0.2, 0, 0, 0.2, 0};
    const auto loc = localize(s, 0);
    ASSERT_EQ(loc.segments.size(), 3u);
    EXPECT_EQ(*loc.primary, (Segment{0, 1, 0}));
    EXPECT_EQ(loc.frames(), (std::vector<int>{0, 1, 4, 5, 8}));
    const std::vector<double> s2{0.15, 0, 0, 0.15, 0.15, 0.15, 0.15, 0, 0.2, 0};
    EXPECT_EQ(*localize(s2, 0).primary, (Segment{3, 6, 4}));
}

TEST(QueryEngine, OracleSceneLocalizesPlantedInterval) {
    const auto [scene, gt] = oracle_scene();
    const auto q = make_query(gt.concept_embeddings.row(1).transpose());
    const auto v = temporal_curve(scene, nullptr, q, scene_canonicals(gt));
    EXPECT_EQ(v.T(), scene.T());
    const auto loc = localize(v, 0);
    ASSERT_TRUE(loc.primary);
    EXPECT_EQ(loc.primary->t_start, 4);
    EXPECT_EQ(loc.primary->t_end, 7);
    EXPECT_EQ(loc.segments.size(), 1u);
}

TEST(QueryEngine, SpatialMapSeparatesMask) {
    const auto [scene, gt] = oracle_scene();
    const auto q = make_query(gt.concept_embeddings.row(1).transpose());
    const auto c = scene_canonicals(gt);
    for (int t = 4; t <= 7; ++t)
        for (const auto& cam : scene.cameras) {
            const auto m = spatial_map(scene, t, cam, nullptr, q, c);
            const auto& mask = gt.masks.at({cam.id, t, 1});
            double in = 0, out = 0;
            long nin = 0, nout = 0;
            for (size_t p = 0; p < mask.size(); ++p) {
                if (mask[p]) {
                    in += m.scores[Eigen::Index(p)];
                    ++nin;
                } else {
                    out += m.scores[Eigen::Index(p)];
                    ++nout;
                }
            }
            if (nin == 0) continue;
            EXPECT_GE(in / nin, out / nout + 0.2) << cam.id << " t=" << t;
        }
}

TEST(QueryEngine, EmptyFrameMapIsZero) {
    DynamicScene scene;
    GaussianFrame f;
    f.means.resize(0, 3);
    f.rotations.resize(0, 4);
    f.scales.resize(0, 3);
    f.colors.resize(0, 3);
    f.latent_features = MatrixXfR(0, 3);
    scene.frames = {f};
    scene.cameras = {make_camera(8, 8, 8)};
    scene.d = 3;
    scene.manifest.attention = false;
    const auto m =
        spatial_map(scene, 0, scene.cameras[0], nullptr, make_query(vec({1, 0, 0})), canon({vec({0, 1, 0})}));
    EXPECT_TRUE(m.scores.isZero());
    EXPECT_EQ(m.scores.size(), 64);
}

TEST(QueryEngine, ViewConsistentScores) {
    DynamicScene scene;
    GaussianFrame f;
    f.means = (MatrixXfR(1, 3) << 0, 0, 0).finished();
    f.rotations = (MatrixXfR(1, 4) << 1, 0, 0, 0).finished();
    f.scales = MatrixXfR::Constant(1, 3, 0.3f);
    f.opacities = Eigen::VectorXf::Ones(1);
    f.colors = MatrixXfR::Constant(1, 3, 0.5f);
    f.latent_features = (MatrixXfR(1, 3) << 0.8f, 0.5f, 0.2f).finished();
    scene.frames = {f};
    scene.d = 3;
    scene.manifest.attention = false;
    auto a = make_camera(32, 32, 30, "a"), b = make_camera(24, 40, 22, "b");
    a.world_to_cam = look_at({3, 0, 1}, {0, 0, 0}, {0, 0, 1});
    b.world_to_cam = look_at({-1, 2.5, -0.5}, {0, 0, 0}, {0, 0, 1});
    scene.cameras = {a, b};
    const auto q = make_query(vec({1, 0, 0}));
    const auto c = canon({vec({0, 1, 0}), vec({0, 0, 1})});
    const auto ma = spatial_map(scene, 0, a, nullptr, q, c);
    const auto mb = spatial_map(scene, 0, b, nullptr, q, c);
    const auto pa = a.project({0, 0, 0}), pb = b.project({0, 0, 0});
    const float sa = ma.scores[Eigen::Index(std::lround(pa.y())) * 32 + std::lround(pa.x())];
    const float sb = mb.scores[Eigen::Index(std::lround(pb.y())) * 24 + std::lround(pb.x())];
    EXPECT_NEAR(sa, sb, 1e-4);
    EXPECT_GT(sa, 0.5f);
}

TEST(QueryEngine, SelectScene) {
    const auto [with, gt] = oracle_scene();
    auto without = with;
    for (auto& f : without.frames) f.latent_features->rowwise() = gt.concept_embeddings.row(0);
    const auto q = make_query(gt.concept_embeddings.row(1).transpose());
    const auto c = scene_canonicals(gt);
    const auto sel = select_scene({&without, &without, &with}, {nullptr, nullptr, nullptr}, q, c, 3);
    EXPECT_EQ(sel.index, 2);
    EXPECT_EQ(sel.scores.size(), 3u);
    EXPECT_EQ(select_scene({&with, &with}, {nullptr, nullptr}, q, c).index, 0);
}

TEST(TextResolver, DictionaryThenError) {
    legs4::testing::TempDir dir("resolver");
    write_tensor(dir.path / "v.4leg", Tensor::from_f32({3}, {0, 3, 4}));
    std::ofstream(dir.path / "dict.json") << R"({"red cluster": "v.4leg"})";
    TextResolver r(dir.path / "dict.json", std::nullopt);
    EXPECT_NEAR(r.query("red cluster").vector[1], 0.6f, 1e-6);
    try {
        r.resolve("a red cluster rising");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("no text embedder"), std::string::npos);
    }
}
