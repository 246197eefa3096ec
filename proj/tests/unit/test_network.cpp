#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "oracles.hpp"
#include "support.hpp"
#include "tpr/error.hpp"
#include "tpr/nn/network.hpp"

using namespace tpr;
using namespace tpr::nn;

TEST_SUITE("network") {

TEST_CASE("reconstruction network architecture") {
    const auto net = make_ai_pr_network<double>(1);
    REQUIRE(net.layers.size() == 12);
    CHECK_NOTHROW(validate_ai_pr(net));
    CHECK(net.layers.front().kernel.q_in == 1);
    CHECK(net.layers.front().kernel.q_out == 16);
    CHECK(!net.layers.front().batch_norm);
    CHECK(net.layers.back().kernel.q_out == 1);
    CHECK(net.layers.back().activation == Activation::sigmoid);
    CHECK(net.layers.back().bias.has_value());
    for (std::size_t i = 1; i + 1 < net.layers.size(); ++i) {
        CHECK(net.layers[i].batch_norm.has_value());
        CHECK(net.layers[i].activation == Activation::relu);
    }
    // 27 * (16 + 10 * 256 + 16) kernel weights, one bias, 10 * 32 BN parameters
    CHECK(net.parameter_count() == 27 * (16 + 10 * 256 + 16) + 1 + 10 * 32);

    auto broken = net;
    broken.layers.pop_back();
    CHECK_THROWS_AS(validate_ai_pr(broken), InvalidArgument);
    broken = net;
    broken.layers[3].batch_norm.reset();
    CHECK_THROWS_AS(validate_ai_pr(broken), InvalidArgument);
    broken = net;
    broken.layers[0].activation = Activation::sigmoid;
    CHECK_THROWS_AS(validate_ai_pr(broken), InvalidArgument);
}

TEST_CASE("forward rejects wrong shapes and non-finite input") {
    const auto net = make_ai_pr_network<float>(2);
    CHECK_THROWS_AS(forward(net, Tensor4<float>({32, 64, 32, 1})), InvalidArgument);
    CHECK_THROWS_AS(forward(net, Tensor4<float>({64, 64, 32, 2})), InvalidArgument);
    Tensor4<float> bad(kBlockShape);
    bad.values()[1234] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(forward(net, bad), InvalidArgument);
    bad.values()[1234] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(forward(net, bad), InvalidArgument);
}

TEST_CASE("zeroed last layer outputs exactly one half") {
    auto net = make_ai_pr_network<float>(3);
    for (auto& w : net.layers.back().kernel.data) w = 0.0f;
    (*net.layers.back().bias)[0] = 0.0f;
    const auto out = forward(net, testing::random_tensor<float>(kBlockShape, 5, 0.0, 1.0));
    for (float v : out.values()) REQUIRE(v == 0.5f);
}

TEST_CASE("zero input gives zero first-layer activations") {
    const auto net = make_ai_pr_network<double>(4);
    const auto z = relu(conv3d(net.layers[0].kernel, Tensor4<double>({8, 8, 8, 1})));
    for (double v : z.values()) REQUIRE(v == 0.0);
}

TEST_CASE("forward is deterministic and bounded") {
    const auto net = make_ai_pr_network<float>(5);
    const auto x = testing::random_tensor<float>(kBlockShape, 6, 0.0, 1.0);
    const auto a = forward(net, x);
    const auto b = forward(net, x);
    CHECK(a == b);
    CHECK(a.shape() == kBlockShape);
    for (float v : a.values()) {
        REQUIRE(v > 0.0f);
        REQUIRE(v < 1.0f);
    }
}

TEST_CASE("forward_any matches forward on a block") {
    const auto net = make_ai_pr_network<double>(7);
    const auto x = testing::random_tensor<double>(kBlockShape, 8, 0.0, 1.0);
    CHECK(forward(net, x) == forward_any(net, x));
}

TEST_CASE("loss closed forms") {
    const auto f = testing::random_tensor<double>({4, 3, 2, 1}, 9, 0.0, 1.0);
    std::vector<Tensor4<double>> t{f}, p{f};
    double sum_sq = 0.0;
    for (double v : f.values()) sum_sq += v * v;
    CHECK(loss<double>(t, p, 1e-3) == doctest::Approx(sum_sq / 1e-3).epsilon(1e-14));

    std::vector<Tensor4<double>> zero{Tensor4<double>(f.shape())};
    CHECK(loss<double>(zero, p, 1e-3) == 0.0);

    std::vector<Tensor4<double>> fs, ps;
    for (std::uint64_t s = 0; s < 3; ++s) {
        fs.push_back(testing::random_tensor<double>({5, 4, 3, 1}, 100 + s, 0.0, 1.0));
        ps.push_back(testing::random_tensor<double>({5, 4, 3, 1}, 200 + s, 0.0, 1.0));
    }
    const double ref = oracle::loss(fs, ps, 1e-3);
    CHECK(std::abs(loss<double>(fs, ps, 1e-3) - ref) <= 1e-12 * std::abs(ref));

    std::vector<Tensor4<double>> other{Tensor4<double>({4, 3, 3, 1})};
    CHECK_THROWS_AS(loss<double>(t, other, 1e-3), InvalidArgument);
    CHECK_THROWS_AS(loss<double>(t, p, 0.0), InvalidArgument);
    CHECK_THROWS_AS(loss<double>(t, fs, 1e-3), InvalidArgument);
}

TEST_CASE("analytic gradients match central differences") {
    const auto report = oracle::check_toy_gradients(11);
    INFO("seed " << report.seed << " margin " << report.margin << " worst " << report.worst());
    CHECK(report.covers(oracle::ParamClass::kernel));
    CHECK(report.covers(oracle::ParamClass::bias));
    CHECK(report.covers(oracle::ParamClass::bn_scale));
    CHECK(report.covers(oracle::ParamClass::bn_shift));
    CHECK(report.within(1e-4) == report.entries.size());
    CHECK(report.worst() <= 1e-4);
}

TEST_CASE("all-zero target gives zero loss and zero gradients") {
    auto net = make_network<double>(1, {3, 3}, 12);
    std::vector<Tensor4<double>> x{testing::random_tensor<double>({6, 6, 4, 1}, 13, 0.0, 1.0)};
    std::vector<Tensor4<double>> f{Tensor4<double>({6, 6, 4, 1})};
    const auto g = gradients<double>(net, x, f, 1e-3);
    CHECK(g.loss == 0.0);
    for (const auto& grad : g.grads)
        for (double v : grad) REQUIRE(v == 0.0);
}

TEST_CASE("duplicating the batch leaves the objective unchanged") {
    auto a = make_network<double>(1, {3, 3}, 14);
    auto b = a;
    const auto x = testing::random_tensor<double>({6, 5, 4, 1}, 15, 0.0, 1.0);
    const auto f = testing::random_tensor<double>({6, 5, 4, 1}, 16, 0.0, 1.0);
    std::vector<Tensor4<double>> x1{x}, f1{f}, x2{x, x}, f2{f, f};
    const auto g1 = gradients<double>(a, x1, f1, 1e-3);
    const auto g2 = gradients<double>(b, x2, f2, 2e-3);
    CHECK(g2.loss == doctest::Approx(g1.loss).epsilon(1e-12));
}

TEST_CASE("gradients update batch-norm running statistics") {
    auto net = make_network<double>(1, {3, 3}, 17);
    const auto before = net.layers[1].batch_norm->running_mean;
    std::vector<Tensor4<double>> x{testing::random_tensor<double>({6, 6, 4, 1}, 18, 0.0, 1.0)};
    std::vector<Tensor4<double>> f{testing::random_tensor<double>({6, 6, 4, 1}, 19, 0.0, 1.0)};
    gradients<double>(net, x, f, 1e-3);
    CHECK(net.layers[1].batch_norm->running_mean != before);
}

TEST_CASE("network files round trip bit-exactly") {
    testing::TempDir dir("net");
    auto net = make_ai_pr_network<double>(20);
    (*net.layers.back().bias)[0] = -0.25;
    net.layers[4].batch_norm->running_var[3] = 1.75;
    save_network(dir / "a.tprn", net);
    const auto back = load_network(dir / "a.tprn");
    CHECK(back == net);
    save_network(dir / "b.tprn", back);
    CHECK(testing::read_bytes(dir / "a.tprn") == testing::read_bytes(dir / "b.tprn"));
}

TEST_CASE("bad network files are rejected") {
    testing::TempDir dir("netbad");
    CHECK_THROWS_AS(load_network(dir / "missing.tprn"), ConfigError);

    const auto net = make_network<double>(1, {2}, 21);
    save_network(dir / "ok.tprn", net);
    const auto bytes = testing::read_bytes(dir / "ok.tprn");
    auto write = [&](const std::string& name, const std::string& content) {
        std::ofstream(dir / name, std::ios::binary) << content;
        return dir / name;
    };
    CHECK_THROWS_AS(load_network(write("trunc.tprn", bytes.substr(0, bytes.size() - 3))), RuntimeError);
    CHECK_THROWS_AS(load_network(write("trail.tprn", bytes + "x")), RuntimeError);
    std::string magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(load_network(write("magic.tprn", magic)), RuntimeError);
    CHECK_THROWS_AS(load_network(write("empty.tprn", "")), RuntimeError);
}

TEST_CASE("precision casts preserve structure") {
    const auto net = make_ai_pr_network<double>(22);
    const auto f = cast_network<float>(net);
    CHECK_NOTHROW(validate_ai_pr(f));
    const auto back = cast_network<double>(f);
    const auto p = net.parameters();
    const auto q = back.parameters();
    REQUIRE(p.size() == q.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t k = 0; k < p[i].size(); ++k)
            REQUIRE(q[i][k] == static_cast<double>(static_cast<float>(p[i][k])));
}

}  // TEST_SUITE
