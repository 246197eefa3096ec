#include <doctest.h>

#include <limits>
#include <sstream>
#include <vector>

#include "support.hpp"
#include "tpr/error.hpp"
#include "tpr/nn/train.hpp"
#include "tpr/parallel.hpp"

using namespace tpr;
using namespace tpr::nn;

namespace {

std::vector<TrainingSample> toy_dataset(std::size_t n, std::uint64_t seed) {
    std::vector<TrainingSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        TrainingSample s;
        s.input = testing::random_volume({16, 16, 8}, seed + 2 * i, 0.0, 2.0);
        s.target = testing::random_volume({16, 16, 8}, seed + 2 * i + 1, 0.0, 1.0);
        s.meta.index = i;
        out.push_back(std::move(s));
    }
    return out;
}

TrainConfig quick_config() {
    TrainConfig c;
    c.epochs = 2;
    c.batch_size = 2;
    c.seed = 31;
    c.validation_fraction = 0.25;
    return c;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("configuration validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.learning_rate = -1.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.validation_fraction = 1.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.loss_epsilon = 0.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("zero learning rate leaves trainable parameters unchanged") {
    auto cfg = quick_config();
    cfg.learning_rate = 0.0;
    const auto init = make_ai_pr_network<double>(cfg.seed);
    const auto result = train<double>(toy_dataset(6, 1), cfg, init);
    const auto a = init.parameters();
    const auto b = result.network.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < a[i].size(); ++k) REQUIRE(a[i][k] == b[i][k]);
    CHECK(result.log.size() == 2);
}

TEST_CASE("training is reproducible from its seed and across thread counts") {
    const auto data = toy_dataset(6, 2);
    const auto cfg = quick_config();
    const int saved = thread_count();
    set_thread_count(1);
    const auto a = train<float>(data, cfg);
    set_thread_count(3);
    const auto b = train<float>(data, cfg);
    set_thread_count(saved);
    CHECK(a.network == b.network);
    CHECK(a.best_epoch == b.best_epoch);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].train_loss == b.log[i].train_loss);
        CHECK(a.log[i].val_loss == b.log[i].val_loss);
        CHECK(a.log[i].val_q == b.log[i].val_q);
    }
}

TEST_CASE("training improves the objective on a learnable target") {
    // Target equals the normalized input: a short run should raise the objective.
    std::vector<TrainingSample> data;
    for (std::size_t i = 0; i < 8; ++i) {
        TrainingSample s;
        s.input = testing::random_volume({16, 16, 8}, 300 + i, 0.0, 1.0);
        s.target = s.input;
        for (auto& v : s.target.values()) v = v > 0.8 ? v : 0.0;
        data.push_back(std::move(s));
    }
    auto cfg = quick_config();
    cfg.epochs = 6;
    cfg.learning_rate = 3e-3;
    const auto r = train<float>(data, cfg);
    CHECK(r.log.back().train_loss > r.log.front().train_loss);
    CHECK(r.best_epoch >= 1);
    CHECK(r.best_epoch <= cfg.epochs);
}

TEST_CASE("degenerate datasets are rejected") {
    const auto cfg = quick_config();
    CHECK_THROWS_AS(train<float>(toy_dataset(1, 3), cfg), InvalidArgument);
    auto mixed = toy_dataset(3, 4);
    mixed[1].input = VoxelVolume({8, 8, 8});
    mixed[1].target = VoxelVolume({8, 8, 8});
    CHECK_THROWS_AS(train<float>(mixed, cfg), InvalidArgument);
}

TEST_CASE("divergence is reported as a runtime error") {
    auto data = toy_dataset(4, 5);
    for (auto& s : data) s.input.values()[7] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(train<float>(data, quick_config()), RuntimeError);
}

TEST_CASE("epoch callback and log file") {
    testing::TempDir dir("trainlog");
    int calls = 0;
    const auto r = train<float>(toy_dataset(4, 6), quick_config(), std::nullopt, [&](const EpochLog& e) {
        ++calls;
        CHECK(e.epoch == calls);
        CHECK(e.val_q >= 0.0);
        CHECK(e.val_q <= 1.0);
        CHECK(e.wall_seconds >= 0.0);
    });
    CHECK(calls == 2);
    write_training_log(dir / "log.csv", r.log);
    std::istringstream in(testing::read_bytes(dir / "log.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,train_loss,val_loss,val_Q,wall_seconds");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
}

TEST_CASE("normalized input scales by the maximum") {
    auto v = testing::random_volume({5, 4, 3}, 7, 0.0, 4.0);
    const auto t = normalized_input<double>(v);
    double peak = 0.0;
    for (double x : t.values()) peak = std::max(peak, x);
    CHECK(peak == 1.0);
    const auto z = normalized_input<double>(VoxelVolume({3, 3, 3}));
    for (double x : z.values()) CHECK(x == 0.0);
}

}  // TEST_SUITE
