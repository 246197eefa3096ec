#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"
#include "tpr/error.hpp"
#include "tpr/nn/tiling.hpp"
#include "tpr/nn/train.hpp"

using namespace tpr;
using namespace tpr::nn;

TEST_SUITE("tiling") {

TEST_CASE("tile plans partition the axis and keep the halo") {
    for (std::int64_t tile : {32, 64})
        for (std::int64_t extent = 1; extent <= 300; ++extent) {
            const std::int64_t halo = 12;
            const auto spans = plan_tiles(extent, tile, halo);
            INFO("extent " << extent << " tile " << tile);
            REQUIRE(!spans.empty());
            CHECK(spans.front().own_begin == 0);
            CHECK(spans.back().own_end == extent);
            for (std::size_t i = 0; i < spans.size(); ++i) {
                const auto& s = spans[i];
                CHECK(s.own_begin < s.own_end);
                if (i > 0) CHECK(s.own_begin == spans[i - 1].own_end);
                if (extent <= tile) continue;
                CHECK(s.start >= 0);
                CHECK(s.start + tile <= extent);
                CHECK(s.own_begin >= s.start);
                CHECK(s.own_end <= s.start + tile);
                // Interior faces stay at least a halo away from owned voxels.
                if (s.start > 0) CHECK(s.own_begin - s.start >= halo);
                if (s.start + tile < extent) CHECK(s.start + tile - s.own_end >= halo);
            }
        }
}

TEST_CASE("tile plans reject degenerate inputs") {
    CHECK_THROWS_AS(plan_tiles(0, 64, 12), InvalidArgument);
    CHECK_THROWS_AS(plan_tiles(100, 20, 12), InvalidArgument);
    CHECK_THROWS_AS(plan_tiles(100, 0, 12), InvalidArgument);
    CHECK(plan_tiles(40, 64, 12).size() == 1);
}

TEST_CASE("a single block is the scaled network output") {
    const auto net = make_ai_pr_network<float>(1);
    const auto vol = testing::random_volume({64, 64, 32}, 2, 0.0, 3.0);
    const auto tiled = infer_tiled(net, vol);
    const auto direct = forward(net, normalized_input<float>(vol));
    const double peak = vol.max();
    for (std::size_t i = 0; i < vol.size(); ++i)
        REQUIRE(tiled.values()[i] == static_cast<double>(direct.values()[i]) * peak);
}

TEST_CASE("constant network output covers every tile") {
    auto net = make_ai_pr_network<float>(3);
    for (auto& w : net.layers.back().kernel.data) w = 0.0f;
    (*net.layers.back().bias)[0] = 0.0f;
    const auto vol = testing::random_volume({128, 64, 32}, 4, 0.0, 2.0);
    const auto out = infer_tiled(net, vol);
    const double expect = 0.5 * vol.max();
    for (double v : out.values()) REQUIRE(v == expect);
}

TEST_CASE("stitched tiles equal the whole-volume pass") {
    const auto net = make_ai_pr_network<float>(5);
    const auto vol = testing::random_volume({96, 96, 48}, 6, 0.0, 1.0);
    const auto tiled = infer_tiled(net, vol);
    const auto whole = forward_any(net, normalized_input<float>(vol));
    const double peak = vol.max();
    double worst = 0.0;
    for (std::size_t i = 0; i < vol.size(); ++i)
        worst = std::max(worst, std::abs(tiled.values()[i] - static_cast<double>(whole.values()[i]) * peak));
    CHECK(worst <= 1e-6);
}

TEST_CASE("tiled output is bounded by the input maximum") {
    const auto net = make_ai_pr_network<float>(7);
    const auto vol = testing::random_volume({70, 40, 20}, 8, 0.0, 5.0);
    const auto out = infer_tiled(net, vol);
    CHECK(out.dims() == vol.dims());
    const double peak = vol.max();
    for (double v : out.values()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= peak);
    }
}

TEST_CASE("zero and empty volumes") {
    const auto net = make_ai_pr_network<float>(9);
    const VoxelVolume zero({64, 64, 32});
    const auto out = infer_tiled(net, zero);
    for (double v : out.values()) REQUIRE(v == 0.0);
    CHECK_THROWS_AS(infer_tiled(net, VoxelVolume({0, 4, 4})), InvalidArgument);
}

}  // TEST_SUITE
