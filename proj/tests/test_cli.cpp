#include "legs4/scene.hpp"
#include "legs4/tensor_io.hpp"
#include "support.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>

namespace fs = std::filesystem;
using legs4::testing::TempDir;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run run(const std::string& args, const std::string& env = "env -u LEGS4_EMBEDDER_URL ") {
    const std::string cmd = env + LEGS4_CLI_PATH + " " + args + " 2>&1";
    Run r;
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string small_synth_args(const fs::path& out) {
    return "--seed 3 synth --out " + out.string() + " --M 160 --T 12 --views 3 --size 32 --D 16 --active-start 4 --active-end 7";
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        files[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(in), {}};
    }
    return files;
}

} // namespace

TEST(Cli, UnknownFlagExitsOne) {
    const auto r = run("synth --bogus 3");
    EXPECT_EQ(r.code, 1) << r.output;
    EXPECT_EQ(run("").code, 1);
}

TEST(Cli, SynthIsDeterministic) {
    TempDir dir("cli_synth");
    ASSERT_EQ(run(small_synth_args(dir.path / "a")).code, 0);
    ASSERT_EQ(run(small_synth_args(dir.path / "b")).code, 0);
    const auto a = snapshot(dir.path / "a"), b = snapshot(dir.path / "b");
    EXPECT_GT(a.size(), 20u);
    EXPECT_EQ(a, b);
    EXPECT_TRUE(fs::exists(dir.path / "a" / "scene" / "scene.json"));
    EXPECT_TRUE(fs::exists(dir.path / "a" / "queries.json"));
}

TEST(Cli, QueryWithoutEmbedderExitsTwo) {
    TempDir dir("cli_query");
    ASSERT_EQ(run(small_synth_args(dir.path / "ws")).code, 0);
    legs4::save_scene(legs4::testing::oracle_scene().first, dir.path / "ws" / "oracle");
    const auto r = run("query --scene " + (dir.path / "ws" / "oracle").string() + " --text \"a red cluster rising\"");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("no text embedder"), std::string::npos) << r.output;

    const auto ok = run("query --scene " + (dir.path / "ws" / "oracle").string() + " --text cluster --dilation 0");
    ASSERT_EQ(ok.code, 0) << ok.output;
    const auto j = nlohmann::json::parse(ok.output);
    EXPECT_EQ(j["primary"]["t_start"], 4);
    EXPECT_EQ(j["primary"]["t_end"], 7);
}

TEST(Cli, EvaluateWritesReportSchema) {
    TempDir dir("cli_eval");
    const fs::path ws = dir.path / "ws";
    ASSERT_EQ(run(small_synth_args(ws)).code, 0);
    legs4::save_scene(legs4::testing::oracle_scene().first, ws / "oracle");
    const auto r = run("evaluate --scene " + (ws / "oracle").string() + " --annotations " + (ws / "annotations").string() +
                       " --out " + (ws / "report").string());
    ASSERT_EQ(r.code, 0) << r.output;
    std::ifstream in(ws / "report.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "scene,query,view,vAP,vIoU,tIoU,tRec,tPrec");
    int rows = 0;
    for (std::string line; std::getline(in, line);) rows += !line.empty();
    EXPECT_EQ(rows, 3);
}

TEST(Cli, LocalizeCurve) {
    TempDir dir("cli_loc");
    std::ofstream(dir.path / "c.json") << "[0.45, 0.1, 0.45]";
    const auto r = run("localize --curve " + (dir.path / "c.json").string() + " --dilation 1");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto j = nlohmann::json::parse(r.output);
    ASSERT_EQ(j["segments"].size(), 1u);
    EXPECT_EQ(j["segments"][0]["t_start"], 0);
    EXPECT_EQ(j["segments"][0]["t_end"], 2);
}

TEST(Cli, MissingSceneExitsTwo) {
    const auto r = run("query --scene /nonexistent/scene --embedding /nonexistent/q.4leg");
    EXPECT_EQ(r.code, 2);
}
