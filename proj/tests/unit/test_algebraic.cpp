#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "support.hpp"
#include "tpr/algebraic.hpp"
#include "tpr/error.hpp"
#include "tpr/evaluation.hpp"
#include "tpr/parallel.hpp"
#include "tpr/synthesis.hpp"

using namespace tpr;

namespace {

using oracle::bilinear_oracle;

struct Scene {
    Dims3 dims;
    CameraRig rig;
    std::vector<WeightMatrix> weights;
    VoxelVolume truth;
    std::vector<ProjectionImage> images;
};

Scene make_scene(Dims3 d, double ppp, std::uint64_t seed) {
    Scene s{d, default_rig(d), {}, {}, {}};
    s.weights = build_weight_matrices(s.rig, d);
    const auto& c = s.rig.cameras[0];
    s.truth = render_volume(seed_particles(d, ppp, c.image_width(), c.image_height(), seed));
    s.images = project_all(s.truth, s.rig, s.weights);
    return s;
}

std::vector<ProjectionImage> random_images(const CameraRig& rig, std::uint64_t seed, double zero_fraction) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ProjectionImage> out;
    for (const auto& c : rig.cameras) {
        ProjectionImage img(c.image_width(), c.image_height());
        for (auto& x : img.values()) x = u(rng) < zero_fraction ? 0.0 : u(rng);
        out.push_back(img);
    }
    return out;
}

}  // namespace

TEST_SUITE("algebraic") {

TEST_CASE("bilinear sampling") {
    ProjectionImage img(3, 2);
    img.at(0, 0) = 1;
    img.at(1, 0) = 2;
    img.at(0, 1) = 3;
    img.at(1, 1) = 4;
    CHECK(*sample_bilinear(img, {0.5, 0.5}) == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(*sample_bilinear(img, {2.0, 1.0}) == 0.0);
    CHECK_FALSE(sample_bilinear(img, {-0.01, 0.5}).has_value());
    CHECK_FALSE(sample_bilinear(img, {0.5, 1.01}).has_value());
}

TEST_CASE("MLOS matches the per-voxel product oracle on 8x8x8") {
    const Dims3 d{8, 8, 8};
    const auto rig = default_rig(d);
    const auto images = random_images(rig, 3, 0.0);
    const auto e = mlos(images, rig, d);
    const auto ref = oracle::mlos(images, rig, d);
    for (std::size_t i = 0; i < e.size(); ++i) CHECK(std::abs(e.values()[i] - ref.values()[i]) <= 1e-12);
}

TEST_CASE("MLOS product annihilation is exact") {
    const Dims3 d{16, 16, 8};
    const auto rig = default_rig(d);
    const auto images = random_images(rig, 9, 0.6);
    const auto e = mlos(images, rig, d);
    int annihilated = 0;
    for (std::int64_t z = 0; z < d.nz; ++z)
        for (std::int64_t y = 0; y < d.ny; ++y)
            for (std::int64_t x = 0; x < d.nx; ++x) {
                double smallest = 1.0;
                for (std::size_t j = 0; j < 4; ++j) {
                    const auto s = sample_bilinear(images[j], rig.cameras[j].project({double(x), double(y), double(z)}));
                    smallest = std::min(smallest, s ? *s : 0.0);
                }
                if (smallest == 0.0) {
                    ++annihilated;
                    CHECK(e.at(x, y, z) == 0.0);
                }
                CHECK(e.at(x, y, z) >= 0.0);
            }
    CHECK(annihilated > 0);
}

TEST_CASE("MLOS of unit images is one inside the rasters") {
    const Dims3 d{12, 10, 6};
    const auto rig = default_rig(d);
    std::vector<ProjectionImage> ones;
    for (const auto& c : rig.cameras) ones.emplace_back(c.image_width(), c.image_height(), 1.0);
    const auto e = mlos(ones, rig, d);
    for (double v : e.values()) CHECK(v == 1.0);

    CameraRig shifted = rig;
    shifted.cameras[0] = CameraModel(rig.cameras[0].angles(), rig.cameras[0].image_width(),
                                     rig.cameras[0].image_height(), {-5.0, rig.cameras[0].origin_offset()[1]});
    const auto cut = mlos(ones, shifted, d);
    CHECK(cut.at(0, 0, 0) == 0.0);
    CHECK(cut.max() == 1.0);
}

TEST_CASE("MLOS checks image count and raster") {
    const Dims3 d{8, 8, 8};
    const auto rig = default_rig(d);
    auto images = random_images(rig, 1, 0.0);
    images.pop_back();
    CHECK_THROWS_AS(mlos(images, rig, d), InvalidArgument);
    images = random_images(rig, 1, 0.0);
    images[1] = ProjectionImage(3, 3);
    CHECK_THROWS_AS(mlos(images, rig, d), InvalidArgument);
}

TEST_CASE("MART config validation") {
    CHECK_THROWS_AS((MartConfig{0, 1.0}.validate()), InvalidArgument);
    CHECK_THROWS_AS((MartConfig{5, 0.0}.validate()), InvalidArgument);
    CHECK_THROWS_AS((MartConfig{5, 1.5}.validate()), InvalidArgument);
    CHECK_NOTHROW((MartConfig{1, 0.3}.validate()));
}

TEST_CASE("MART keeps the truth as a fixed point") {
    const auto s = make_scene({32, 32, 32}, 0.05, 21);
    double worst = 0.0;
    VoxelVolume prev = s.truth;
    const auto out = mart(s.images, s.rig, s.weights, s.truth, {10, 1.0}, [&](int, const VoxelVolume& cur) {
        for (std::size_t i = 0; i < cur.size(); ++i)
            if (prev.values()[i] > 0) worst = std::max(worst, std::abs(cur.values()[i] / prev.values()[i] - 1.0));
        prev = cur;
    });
    CHECK(worst <= 1e-6);
    CHECK(quality_factor(out, s.truth) >= 0.999);
}

TEST_CASE("MART preserves zeros and nonnegativity") {
    const auto s = make_scene({20, 20, 12}, 0.1, 5);
    CHECK(mart(s.images, s.rig, s.weights, VoxelVolume(s.dims), {3, 1.0}).max() == 0.0);

    auto init = testing::random_volume(s.dims, 8);
    std::mt19937_64 rng(2);
    for (auto& v : init.values())
        if (rng() % 3 == 0) v = 0.0;
    for (double mu : {0.2, 0.7, 1.0}) {
        const auto out = mart(s.images, s.rig, s.weights, init, {4, mu}, [&](int, const VoxelVolume& cur) {
            for (std::size_t i = 0; i < cur.size(); ++i) {
                CHECK(cur.values()[i] >= 0.0);
                CHECK(std::isfinite(cur.values()[i]));
                if (init.values()[i] == 0.0) CHECK(cur.values()[i] == 0.0);
            }
        });
        CHECK(out.max() > 0.0);
    }
}

TEST_CASE("MART rejects negative intensities and initial values") {
    const auto s = make_scene({12, 12, 8}, 0.1, 5);
    auto bad = s.images;
    bad[2].values()[0] = -1e-3;
    CHECK_THROWS_AS(mart(bad, s.rig, s.weights, s.truth, {2, 1.0}), InvalidArgument);
    auto init = s.truth;
    init.values()[5] = -1.0;
    CHECK_THROWS_AS(mart(s.images, s.rig, s.weights, init, {2, 1.0}), InvalidArgument);
}

TEST_CASE("MART reprojection residual does not grow from MLOS") {
    const auto s = make_scene({32, 32, 32}, 0.05, 33);
    const auto init = mlos(s.images, s.rig, s.dims);
    std::vector<double> trace{reprojection_residual_l1(s.images, s.rig, s.weights, init)};
    mart(s.images, s.rig, s.weights, init, {10, 1.0},
         [&](int, const VoxelVolume& cur) { trace.push_back(reprojection_residual_l1(s.images, s.rig, s.weights, cur)); });
    REQUIRE(trace.size() == 11);
    for (std::size_t k = 1; k < trace.size(); ++k) CHECK(trace[k] <= trace[k - 1] * (1.0 + 1e-6));
    CHECK(trace.back() < 0.5 * trace.front());
}

TEST_CASE("Gaussian filter of a delta is the normalized stencil") {
    const Dims3 d{7, 7, 7};
    VoxelVolume v(d);
    v.at(3, 3, 3) = 1.0;
    const auto f = gaussian_filter3(v);
    double norm = 0.0;
    for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b)
            for (int c = -1; c <= 1; ++c) norm += std::exp(-(a * a + b * b + c * c) / (2 * 0.25));
    double sum = 0.0;
    for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b)
            for (int c = -1; c <= 1; ++c) {
                const double ref = std::exp(-(a * a + b * b + c * c) / (2 * 0.25)) / norm;
                CHECK(std::abs(f.at(3 + a, 3 + b, 3 + c) - ref) < 1e-15);
                sum += f.at(3 + a, 3 + b, 3 + c);
            }
    CHECK(std::abs(sum - 1.0) < 1e-14);
    CHECK(std::abs(f.sum() - 1.0) < 1e-14);
}

TEST_CASE("Gaussian filter keeps constants and interior mass") {
    const Dims3 d{9, 8, 7};
    const auto c = gaussian_filter3(VoxelVolume(d, 0.6));
    for (double v : c.values()) CHECK(std::abs(v - 0.6) < 1e-14);

    VoxelVolume blob(d);
    const auto r = testing::random_volume({5, 4, 3}, 4);
    for (std::int64_t z = 0; z < 3; ++z)
        for (std::int64_t y = 0; y < 4; ++y)
            for (std::int64_t x = 0; x < 5; ++x) blob.at(x + 2, y + 2, z + 2) = r.at(x, y, z);
    const auto f = gaussian_filter3(blob);
    CHECK(std::abs(f.sum() - blob.sum()) <= 1e-8 * blob.sum());
    for (double v : f.values()) CHECK(v >= 0.0);
}

TEST_CASE("SF-MART is at least as good as MART at ppp 0.15") {
    // Benchmark geometry and seeding of the noise sweep: 128 x 128 x 64 volume,
    // default rig, noisy images.
    SweepConfig c;
    c.volume_dims = {128, 128, 64};
    c.ppp_values = {0.15};
    c.noise_levels = {0.05, 0.15, 0.30};
    c.methods = {Method::parse("MART-10"), Method::parse("SF-MART-10")};
    c.seeds = {1};
    const auto rows = run_sweep(c);
    REQUIRE(rows.size() == 6);
    for (std::size_t i = 0; i < rows.size(); i += 2) {
        MESSAGE("n = " << rows[i].noise_level << ": MART-10 Q = " << rows[i].q << ", SF-MART-10 Q = " << rows[i + 1].q);
        CHECK(rows[i + 1].q >= rows[i].q);
    }
}

TEST_CASE("reconstructions do not depend on the thread count") {
    const auto s = make_scene({24, 20, 12}, 0.1, 7);
    const int saved = thread_count();
    set_thread_count(1);
    const auto m1 = mlos(s.images, s.rig, s.dims);
    const auto a1 = sf_mart(s.images, s.rig, s.weights, m1, {3, 0.8});
    const auto w1 = build_weight_matrices(s.rig, s.dims);
    const auto p1 = forward_project(a1, w1[1], s.rig.cameras[1]);
    set_thread_count(4);
    const auto m4 = mlos(s.images, s.rig, s.dims);
    const auto a4 = sf_mart(s.images, s.rig, s.weights, m4, {3, 0.8});
    const auto w4 = build_weight_matrices(s.rig, s.dims);
    const auto p4 = forward_project(a4, w4[1], s.rig.cameras[1]);
    set_thread_count(saved);
    CHECK(m1 == m4);
    CHECK(a1 == a4);
    CHECK(p1 == p4);
}

}  // TEST_SUITE
