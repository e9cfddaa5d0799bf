#include "legs4/error.hpp"
#include "legs4/scene.hpp"
#include "legs4/synth.hpp"
#include "legs4/tensor_io.hpp"
#include "support.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <fstream>

namespace fs = std::filesystem;
using namespace legs4;
using legs4::testing::TempDir;

namespace {

DynamicScene tiny_scene() {
    SynthSpec s;
    s.M = 24;
    s.T = 3;
    s.views = 2;
    s.width = s.height = 16;
    s.D = 8;
    s.active_start = 1;
    s.active_end = 1;
    return synth_scene(s).first;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST(TensorIo, RoundTripF32AndU8) {
    const auto a = Tensor::from_f32({2, 3}, {1, 2, 3, 4, 5, 6.5f});
    EXPECT_EQ(decode_tensor(encode_tensor(a)), a);
    const auto b = Tensor::from_u8({1, 2, 2}, {0, 7, 255, 9});
    EXPECT_EQ(decode_tensor(encode_tensor(b)), b);
}

TEST(TensorIo, RejectsTruncatedAndBadMagic) {
    auto bytes = encode_tensor(Tensor::from_f32({4}, {1, 2, 3, 4}));
    auto cut = bytes;
    cut.pop_back();
    EXPECT_THROW(decode_tensor(cut), Error);
    bytes[0] = 'X';
    EXPECT_THROW(decode_tensor(bytes), Error);
}

TEST(TensorIo, ShapeMismatchNamesField) {
    TempDir dir("tensor");
    write_tensor(dir.path / "a.4leg", Tensor::from_f32({2, 2}, {1, 2, 3, 4}));
    try {
        read_f32(dir.path / "a.4leg", {4, 1}, "opacities");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("opacities"), std::string::npos);
    }
}

TEST(SceneStore, SaveLoadRoundTrip) {
    TempDir dir("scene_rt");
    auto scene = tiny_scene();
    save_scene(scene, dir.path);
    EXPECT_EQ(load_scene(dir.path), scene);
}

TEST(SceneStore, RoundTripWithLatents) {
    TempDir dir("scene_lat");
    auto scene = tiny_scene();
    scene.d = 4;
    Rng rng(1);
    for (auto& f : scene.frames) {
        MatrixXfR l(f.size(), 4);
        for (Eigen::Index i = 0; i < l.size(); ++i) l.data()[i] = float(rng.normal());
        f.latent_features = l;
    }
    save_scene(scene, dir.path);
    const auto back = load_scene(dir.path);
    EXPECT_TRUE(back.distilled());
    EXPECT_EQ(back, scene);
}

TEST(SceneStore, TwoSavesAreByteIdentical) {
    TempDir a("scene_a"), b("scene_b");
    const auto scene = tiny_scene();
    save_scene(scene, a.path);
    save_scene(scene, b.path);
    size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a.path)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a.path);
        EXPECT_EQ(slurp(e.path()), slurp(b.path / rel)) << rel;
        ++files;
    }
    EXPECT_GT(files, 3u);
}

TEST(SceneStore, FrameCountMismatch) {
    TempDir dir("scene_fc");
    save_scene(tiny_scene(), dir.path);
    std::ifstream in(dir.path / "scene.json");
    auto j = nlohmann::json::parse(in);
    in.close();
    // keep T=3 but list only two frames
    j["frames"].erase(2);
    std::ofstream(dir.path / "scene.json") << j.dump();
    try {
        load_scene(dir.path);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("frame count mismatch"), std::string::npos) << e.what();
    }
}

TEST(SceneStore, RotationNotUnit) {
    auto scene = tiny_scene();
    scene.frames[1].rotations.row(5) *= 0.9f;
    try {
        validate_scene(scene);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("rotation not unit"), std::string::npos);
    }
}

TEST(SceneStore, OtherInvariants) {
    auto bad_opacity = tiny_scene();
    bad_opacity.frames[0].opacities[0] = 1.5f;
    EXPECT_THROW(validate_scene(bad_opacity), ValidationError);
    auto bad_scale = tiny_scene();
    bad_scale.frames[2].scales(3, 1) = 0.0f;
    EXPECT_THROW(validate_scene(bad_scale), ValidationError);
    auto bad_cam = tiny_scene();
    bad_cam.cameras[0].world_to_cam(0, 0) = 2.0f;
    EXPECT_THROW(validate_scene(bad_cam), ValidationError);
    auto ragged = tiny_scene();
    ragged.frames[1].means.conservativeResize(10, 3);
    EXPECT_THROW(validate_scene(ragged), ValidationError);
}

TEST(SceneStore, UnwritablePathIsIoError) {
    TempDir dir("scene_ro");
    std::ofstream(dir.path / "blocker") << "x";
    EXPECT_THROW(save_scene(tiny_scene(), dir.path / "blocker" / "scene"), IoError);
}

TEST(Camera, LookAtProjectsTargetToCenter) {
    auto cam = legs4::testing::make_camera(64, 48, 50);
    cam.world_to_cam = look_at({3, -2, 1.5}, {0.2, 0.1, 0.4}, {0, 0, 1});
    const auto p = cam.project({0.2, 0.1, 0.4});
    EXPECT_NEAR(p.x(), 32.0, 1e-3);
    EXPECT_NEAR(p.y(), 24.0, 1e-3);
    // world up maps to image up
    const auto above = cam.project({0.2, 0.1, 0.9});
    EXPECT_LT(above.y(), 24.0);
    const Eigen::Vector3d back = cam.unproject(10.0, 7.0, 2.5);
    EXPECT_NEAR(cam.project(back).x(), 10.0, 1e-3);
    EXPECT_NEAR(cam.to_camera(back).z(), 2.5, 1e-4);
}

TEST(Synth, DeterministicGivenSeed) {
    SynthSpec s = legs4::testing::small_spec();
    s.seed = 7;
    const auto [a, ga] = synth_scene(s);
    const auto [b, gb] = synth_scene(s);
    EXPECT_EQ(a, b);
    EXPECT_EQ(ga.masks, gb.masks);
    validate_scene(a);
}

TEST(Synth, ConceptEmbeddingsOrthonormal) {
    SynthSpec s = legs4::testing::small_spec();
    s.D = 16;
    s.concepts = 2;
    const auto gt = synth_scene(s).second;
    ASSERT_EQ(gt.concept_embeddings.rows(), 2);
    EXPECT_NEAR(gt.concept_embeddings.row(0).dot(gt.concept_embeddings.row(1)), 0.0, 1e-6);
    EXPECT_NEAR(gt.concept_embeddings.row(0).norm(), 1.0, 1e-6);
    EXPECT_NEAR(gt.concept_embeddings.row(1).norm(), 1.0, 1e-6);
}

TEST(Synth, ActiveMaskOnlyInsideInterval) {
    const auto s = legs4::testing::small_spec();
    const auto [scene, gt] = synth_scene(s);
    for (const auto& cam : scene.cameras)
        for (int t = 0; t < s.T; ++t) {
            const auto& m = gt.masks.at({cam.id, t, 1});
            const long on = std::count_if(m.begin(), m.end(), [](uint8_t v) { return v != 0; });
            if (t < s.active_start || t > s.active_end)
                EXPECT_EQ(on, 0) << cam.id << " t=" << t;
        }
    long active = 0;
    for (const auto& cam : scene.cameras) {
        const auto& m = gt.masks.at({cam.id, s.active_start + 1, 1});
        active += std::count_if(m.begin(), m.end(), [](uint8_t v) { return v != 0; });
    }
    EXPECT_GT(active, 0);
}

TEST(Synth, RejectsBadSpec) {
    SynthSpec s;
    s.active_end = s.T + 3;
    EXPECT_THROW(s.validate(), Error);
}
