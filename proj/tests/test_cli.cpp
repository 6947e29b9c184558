#include "skyfall/bundle.hpp"
#include "skyfall/image.hpp"
#include "skyfall/ply.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include <httplib.h>

using namespace skyfall;
namespace fs = std::filesystem;

namespace {

const fs::path& work() {
    static const fs::path dir = [] {
        const fs::path p = fs::temp_directory_path() / "skyfall_test_cli";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

// Runs the CLI with stdout/stderr captured to work()/last.log; returns the exit code.
int cli(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + "\"" SKYFALL_CLI_PATH "\" " + args + " > \"" +
                            (work() / "last.log").string() + "\" 2>&1";
    const int st = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(st));
    return WEXITSTATUS(st);
}

std::string last_log() {
    std::ifstream f(work() / "last.log");
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Small scene shared by the cases below.
const fs::path& scene() {
    static const fs::path dir = [] {
        const fs::path cfg = work() / "scene.json";
        write_text(cfg, R"({"scene": {"num_gaussians": 40, "num_views": 4, "num_heldout": 1, "num_low_views": 1,
                             "resolution": 20}})");
        const fs::path out = work() / "scene";
        const int rc = cli("synth-scene --config " + q(cfg) + " --seed 5 --out " + q(out));
        INFO(last_log());
        REQUIRE(rc == 0);
        return out;
    }();
    return dir;
}

const fs::path& checkpoint() {
    static const fs::path ckpt = [] {
        const fs::path out = work() / "ckpt" / "model.skyb";
        fs::create_directories(out.parent_path());
        const int rc = cli("train-sat --scene " + q(scene()) + " --iters 30 --oracle none --seed 3 --out " + q(out) +
                           " --log " + q(work() / "train.csv"));
        INFO(last_log());
        REQUIRE(rc == 0);
        return out;
    }();
    return ckpt;
}

} // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(cli("") == 2);
    CHECK(cli("frobnicate") == 2);
    CHECK(cli("synth-scene") == 2);
    CHECK(cli("synth-scene --out " + q(work() / "x") + " --dates 0") == 2);

    const fs::path bad_key = work() / "bad_key.json";
    write_text(bad_key, R"({"scene": {"num_gausians": 3}})");
    CHECK(cli("synth-scene --config " + q(bad_key) + " --out " + q(work() / "x")) == 2);
    CHECK(last_log().find("num_gausians") != std::string::npos);

    const fs::path bad_json = work() / "bad_json.json";
    write_text(bad_json, "{\"scene\": ");
    CHECK(cli("synth-scene --config " + q(bad_json) + " --out " + q(work() / "x")) == 2);

    CHECK(cli("synth-scene --out " + q(work() / "x"), "SKYFALL_SEED=abc") == 2);
    CHECK(cli("render --ckpt " + q(checkpoint()) + " --orbit 45,250 --out " + q(work() / "r")) == 2);
    CHECK(cli("render --ckpt " + q(checkpoint()) + " --orbit 95,250,2 --out " + q(work() / "r")) == 2);
    CHECK(cli("train-sat --scene " + q(scene()) + " --oracle magic --out " + q(work() / "m.skyb")) == 2);
    CHECK(cli("idu --ckpt " + q(checkpoint()) + " --refiner mock:sharpen --out " + q(work() / "i.skyb")) == 2);
}

TEST_CASE("synth-scene writes a readable scene; the seed flag beats the environment") {
    const fs::path s = scene();
    CHECK(fs::exists(s / "images"));
    const fs::path cfg = work() / "scene.json";
    CHECK(cli("synth-scene --config " + q(cfg) + " --seed 5 --out " + q(work() / "scene_again")) == 0);
    const std::string flag_only = last_log();
    CHECK(cli("synth-scene --config " + q(cfg) + " --seed 5 --out " + q(work() / "scene_env"), "SKYFALL_SEED=99") == 0);
    CHECK(last_log().substr(last_log().find("hash")) == flag_only.substr(flag_only.find("hash")));
    CHECK(cli("synth-scene --config " + q(cfg) + " --out " + q(work() / "scene_env2"), "SKYFALL_SEED=99") == 0);
    CHECK(last_log().substr(last_log().find("hash")) != flag_only.substr(flag_only.find("hash")));
}

TEST_CASE("train-sat is reproducible and writes its log") {
    const fs::path a = checkpoint();
    const fs::path b = work() / "ckpt" / "model_b.skyb";
    REQUIRE(cli("train-sat --scene " + q(scene()) + " --iters 30 --oracle none --seed 3 --out " + q(b)) == 0);
    CHECK(slurp(a) == slurp(b));
    const std::string log = slurp(work() / "train.csv");
    CHECK(log.rfind("iter,loss_color,loss_op,loss_depth,num_gaussians\n", 0) == 0);
    CHECK(load_bundle(a).model.cloud.size() > 0);
}

TEST_CASE("render, eval and export-ply") {
    const fs::path views = work() / "views";
    REQUIRE(cli("render --ckpt " + q(checkpoint()) + " --orbit 60,250,3 --resolution 16 --out " + q(views)) == 0);
    for (int i = 0; i < 3; ++i) CHECK(read_png(views / ("view_00" + std::to_string(i) + ".png")).width == 16);

    REQUIRE(cli("eval --pred " + q(views) + " --ref " + q(views) + " --csv " + q(work() / "eval.csv")) == 0);
    CHECK(slurp(work() / "eval.csv").rfind("view,psnr,ssim\n", 0) == 0);
    CHECK(cli("eval --pred " + q(views) + " --ref " + q(scene())) == 3);

    const fs::path ply = work() / "model.ply";
    REQUIRE(cli("export-ply --ckpt " + q(checkpoint()) + " --double --out " + q(ply)) == 0);
    CHECK(import_ply(ply).size() == load_bundle(checkpoint()).model.cloud.size());
}

TEST_CASE("data errors exit with 3") {
    const fs::path broken = work() / "broken.skyb";
    std::string bytes = slurp(checkpoint());
    bytes[bytes.size() / 2] ^= 0x5a;
    write_text(broken, bytes);
    CHECK(cli("export-ply --ckpt " + q(broken) + " --out " + q(work() / "b.ply")) == 3);
    fs::create_directories(work() / "empty_scene");
    CHECK(cli("train-sat --scene " + q(work() / "empty_scene") + " --iters 5 --oracle none --out " +
              q(work() / "e.skyb")) == 3);
}

TEST_CASE("idu with a mock refiner, and backend failures exit with 4") {
    const fs::path out = work() / "idu" / "model.skyb";
    fs::create_directories(out.parent_path());
    const std::string common = "idu --ckpt " + q(checkpoint()) + " --episodes 1 --iters 10 --resolution 16 --out " + q(out);
    int rc = cli(common + " --refiner mock:identity");
    INFO(last_log());
    REQUIRE(rc == 0);
    const SceneBundle b = load_bundle(out);
    CHECK(b.config.at("episodes").size() == 1);
    CHECK(b.config.at("episodes")[0].at("elevation_deg") == 85.0);

    // A refiner service that always fails.
    httplib::Server server;
    server.Post("/refine", [](const httplib::Request&, httplib::Response& res) {
        res.status = 500;
        res.set_content("out of memory", "text/plain");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread serve([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    const fs::path cfg = work() / "no_retry.json";
    write_text(cfg, R"({"idu": {"refine_retries": 0}})");
    rc = cli(common + " --config " + q(cfg) + " --refiner http://127.0.0.1:" + std::to_string(port));
    server.stop();
    serve.join();
    CHECK(rc == 4);
    CHECK(last_log().find("out of memory") != std::string::npos);
}
