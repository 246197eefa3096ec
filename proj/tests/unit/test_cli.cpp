#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "support.hpp"
#include "tpr/io.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome tpr_run(std::vector<std::string> args) {
    args.insert(args.begin(), "tpr");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = tpr::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

const fs::path kField = fs::path(TPR_FIXTURE_DIR) / "field32";

std::string images_arg() {
    std::string s;
    for (int j = 0; j < 4; ++j) s += (j ? "," : "") + (kField / ("cam" + std::to_string(j) + ".tprv")).string();
    return s;
}

double parse_q(const std::string& out) {
    const auto pos = out.find("Q = ");
    REQUIRE(pos != std::string::npos);
    return std::stod(out.substr(pos + 4));
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help exits cleanly") {
    const auto r = tpr_run({"--help"});
    CHECK(r.code == tpr::cli::kExitOk);
    CHECK(r.out.find("reconstruct") != std::string::npos);
    CHECK(tpr_run({"sweep", "--help"}).code == tpr::cli::kExitOk);
}

TEST_CASE("parse errors are configuration errors") {
    auto r = tpr_run({});
    CHECK(r.code == tpr::cli::kExitConfig);
    CHECK(r.err.rfind("tpr: error kind=config msg=\"", 0) == 0);
    CHECK(tpr_run({"reconstruct", "--method", "nope", "--out", "x"}).code == tpr::cli::kExitConfig);
    CHECK(tpr_run({"frobnicate"}).code == tpr::cli::kExitConfig);
}

TEST_CASE("stochastic commands need a seed") {
    testing::TempDir dir("noseed");
    const auto r = tpr_run({"synth", "--mode", "field", "--dims", "8,8,8", "--out", (dir / "f").string()});
    CHECK(r.code == tpr::cli::kExitConfig);
    CHECK(r.err.find("--seed") != std::string::npos);
    CHECK(!fs::exists(dir / "f"));
}

TEST_CASE("reconstruct and evaluate the shipped field") {
    testing::TempDir dir("recon");
    const auto rig = (kField / "rig.cfg").string();
    const auto truth = (kField / "truth.tprv").string();
    for (const char* method : {"mlos", "mart"}) {
        const auto vol = (dir / (std::string(method) + ".tprv")).string();
        auto r = tpr_run({"reconstruct", "--method", method, "--images", images_arg(), "--rig", rig, "--dims",
                          "32,32,32", "--iterations", "3", "--out", vol});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        CHECK(fs::exists(vol + ".meta"));
        r = tpr_run({"eval", "--volume", vol, "--truth", truth, "--out", (dir / "q.csv").string()});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const double q = parse_q(r.out);
        CHECK(q > 0.0);
        CHECK(q < 1.0);
    }
    const auto csv = testing::read_bytes(dir / "q.csv");
    CHECK(csv.rfind("volume,truth,Q\n", 0) == 0);
    CHECK(count_lines(csv) == 3);
}

TEST_CASE("network reconstruction without a network fails before writing") {
    testing::TempDir dir("aipr");
    const auto vol = dir / "out.tprv";
    auto r = tpr_run({"reconstruct", "--method", "aipr", "--images", images_arg(), "--rig",
                      (kField / "rig.cfg").string(), "--dims", "32,32,32", "--out", vol.string()});
    CHECK(r.code == tpr::cli::kExitConfig);
    CHECK(r.err.rfind("tpr: error kind=config", 0) == 0);
    CHECK(fs::is_empty(dir.path()));

    r = tpr_run({"reconstruct", "--method", "aipr", "--network", (dir / "missing.tprn").string(), "--images",
                 images_arg(), "--rig", (kField / "rig.cfg").string(), "--dims", "32,32,32", "--out", vol.string()});
    CHECK(r.code == tpr::cli::kExitConfig);
    CHECK(fs::is_empty(dir.path()));
}

TEST_CASE("camera count must match the rig") {
    testing::TempDir dir("camcount");
    const auto r = tpr_run({"reconstruct", "--images", (kField / "cam0.tprv").string(), "--rig",
                            (kField / "rig.cfg").string(), "--dims", "32,32,32", "--out", (dir / "v.tprv").string()});
    CHECK(r.code == tpr::cli::kExitConfig);
}

TEST_CASE("synthesize, train, sweep") {
    testing::TempDir dir("e2e");
    const auto ds = (dir / "ds").string();
    auto r = tpr_run({"synth", "--seed", "5", "--count", "4", "--dims", "16,16,8", "--ppp-min", "0.05", "--ppp-max",
                      "0.1", "--out", ds});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(fs::exists(fs::path(ds) / "manifest.csv"));
    CHECK(fs::exists(fs::path(ds) / "rig.cfg"));

    const auto net = (dir / "net.tprn").string();
    r = tpr_run({"train", "--dataset", ds, "--epochs", "1", "--batch-size", "2", "--val-fraction", "0.25",
                 "--precision", "f32", "--seed", "5", "--out", net});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(fs::exists(net));
    const auto log = testing::read_bytes(net + ".log.csv");
    CHECK(log.rfind("epoch,train_loss,val_loss,val_Q,wall_seconds\n", 0) == 0);
    CHECK(count_lines(log) == 2);

    const auto out = (dir / "sweep").string();
    r = tpr_run({"sweep", "--dims", "16,16,8", "--ppp", "0.05,0.1", "--noise", "0,0.1", "--methods", "MLOS,MART-2,AI-PR",
                 "--seeds", "1", "--network", net, "--precision", "f32", "--out", out});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto summary = testing::read_bytes(fs::path(out) / "summary.csv");
    CHECK(count_lines(summary) == 1 + 2 * 2 * 3);
    CHECK(summary.find("AI-PR,0.1,0.1,") != std::string::npos);
    CHECK(r.out == summary);
}

TEST_CASE("config file sections with command-line overrides") {
    testing::TempDir dir("cfg");
    {
        std::ofstream cfg(dir / "run.ini");
        cfg << "[sweep]\ndims = 12,12,8\nppp = 0.05\nmethods = MLOS,MART-1\nseed = 3\nout = "
            << (dir / "from_file").string() << "\n";
    }
    auto r = tpr_run({"--config", (dir / "run.ini").string(), "sweep"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(fs::exists(dir / "from_file" / "results.csv"));
    CHECK(count_lines(r.out) == 3);

    r = tpr_run({"--config", (dir / "run.ini").string(), "sweep", "--methods", "MLOS", "--out",
                 (dir / "from_flag").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(fs::exists(dir / "from_flag" / "results.csv"));
    CHECK(count_lines(r.out) == 2);
}

TEST_CASE("reruns produce identical bytes") {
    testing::TempDir dir("rerun");
    for (const char* name : {"a", "b"}) {
        const auto r = tpr_run({"synth", "--mode", "field", "--dims", "16,16,8", "--ppp", "0.08", "--noise", "0.1",
                                "--seed", "9", "--out", (dir / name).string()});
        REQUIRE_MESSAGE(r.code == 0, r.err);
    }
    for (const char* f : {"truth.tprv", "cam0.tprv", "cam3.pgm", "rig.cfg"})
        CHECK(testing::read_bytes(dir / "a" / f) == testing::read_bytes(dir / "b" / f));

    const auto rig = (dir / "a" / "rig.cfg").string();
    std::string images;
    for (int j = 0; j < 4; ++j) images += (j ? "," : "") + (dir / "a" / ("cam" + std::to_string(j) + ".tprv")).string();
    for (const char* threads : {"1", "3"}) {
        const auto r = tpr_run({"reconstruct", "--method", "sfmart", "--iterations", "2", "--images", images, "--rig",
                                rig, "--dims", "16,16,8", "--threads", threads, "--out",
                                (dir / (std::string("v") + threads + ".tprv")).string()});
        REQUIRE_MESSAGE(r.code == 0, r.err);
    }
    CHECK(testing::read_bytes(dir / "v1.tprv") == testing::read_bytes(dir / "v3.tprv"));
}

}  // TEST_SUITE
