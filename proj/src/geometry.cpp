#include "tpr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tpr/error.hpp"
#include "tpr/parallel.hpp"

namespace tpr {

namespace {

double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double w = std::fmod(a + std::numbers::pi, two_pi);
    if (w < 0.0) w += two_pi;
    w -= std::numbers::pi;
    // fmod can round up to exactly +pi
    return w >= std::numbers::pi ? -std::numbers::pi : w;
}

constexpr std::size_t kForwardChunks = 16;

}  // namespace

EulerAngles::EulerAngles(double alpha, double beta, double gamma) {
    if (!std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(gamma))
        throw InvalidArgument("Euler angles must be finite");
    alpha_ = wrap_angle(alpha);
    beta_ = wrap_angle(beta);
    gamma_ = wrap_angle(gamma);
}

EulerAngles EulerAngles::from_degrees(double alpha, double beta, double gamma) {
    constexpr double k = std::numbers::pi / 180.0;
    return {alpha * k, beta * k, gamma * k};
}

RotationMatrix rotation_from_euler(const EulerAngles& angles) {
    const double ca = std::cos(angles.alpha()), sa = std::sin(angles.alpha());
    const double cb = std::cos(angles.beta()), sb = std::sin(angles.beta());
    const double cg = std::cos(angles.gamma()), sg = std::sin(angles.gamma());
    RotationMatrix t{};
    t[0] = {ca * cg - sa * cb * sg, -ca * sg - sa * cb * cg, sa * sb};
    t[1] = {sa * cg + ca * cb * sg, -sa * sg + ca * cb * cg, -ca * sb};
    t[2] = {sb * sg, sb * cg, cb};
    return t;
}

CameraModel::CameraModel(EulerAngles angles, std::int64_t image_width, std::int64_t image_height,
                         Vec2 origin_offset, double scale)
    : angles_(angles),
      rotation_(rotation_from_euler(angles)),
      width_(image_width),
      height_(image_height),
      offset_(origin_offset),
      scale_(scale) {
    if (image_width < 1 || image_height < 1) throw InvalidArgument("camera image dimensions must be >= 1");
    if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidArgument("camera scale must be positive");
    if (!std::isfinite(origin_offset[0]) || !std::isfinite(origin_offset[1]))
        throw InvalidArgument("camera origin offset must be finite");
}

Vec2 CameraModel::project(const Vec3& p) const {
    const auto& r = rotation_;
    return {scale_ * (r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2]) + offset_[0],
            scale_ * (r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2]) + offset_[1]};
}

bool CameraModel::operator==(const CameraModel& o) const {
    return angles_.alpha() == o.angles_.alpha() && angles_.beta() == o.angles_.beta() &&
           angles_.gamma() == o.angles_.gamma() && width_ == o.width_ && height_ == o.height_ &&
           offset_ == o.offset_ && scale_ == o.scale_;
}

Vec2 project_point(const CameraModel& camera, const Vec3& point) {
    if (!std::isfinite(point[0]) || !std::isfinite(point[1]) || !std::isfinite(point[2]))
        throw InvalidArgument("project_point: point must be finite");
    return camera.project(point);
}

CameraRig default_rig(Dims3 dims, double tilt_degrees) {
    if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1) throw InvalidArgument("volume dimensions must be >= 1");
    const double gammas[] = {0.0, 90.0, 180.0, 270.0};

    // Raster size: largest projected extent of the volume box over all views.
    double extent_u = 0.0, extent_v = 0.0;
    for (double g : gammas) {
        const CameraModel probe(EulerAngles::from_degrees(0.0, tilt_degrees, g), 1, 1);
        double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
        for (int corner = 0; corner < 8; ++corner) {
            const Vec3 p{(corner & 1) ? dims.nx - 0.5 : -0.5, (corner & 2) ? dims.ny - 0.5 : -0.5,
                         (corner & 4) ? dims.nz - 0.5 : -0.5};
            const Vec2 q = probe.project(p);
            umin = std::min(umin, q[0]);
            umax = std::max(umax, q[0]);
            vmin = std::min(vmin, q[1]);
            vmax = std::max(vmax, q[1]);
        }
        extent_u = std::max(extent_u, umax - umin);
        extent_v = std::max(extent_v, vmax - vmin);
    }
    const auto width = static_cast<std::int64_t>(std::ceil(extent_u - 1e-9)) + 2;
    const auto height = static_cast<std::int64_t>(std::ceil(extent_v - 1e-9)) + 2;

    CameraRig rig;
    const Vec3 center{(dims.nx - 1) / 2.0, (dims.ny - 1) / 2.0, (dims.nz - 1) / 2.0};
    for (double g : gammas) {
        const CameraModel probe(EulerAngles::from_degrees(0.0, tilt_degrees, g), width, height);
        const Vec2 c = probe.project(center);
        rig.cameras.emplace_back(probe.angles(), width, height,
                                 Vec2{(width - 1) / 2.0 - c[0], (height - 1) / 2.0 - c[1]});
    }
    return rig;
}

WeightMatrix::WeightMatrix(Dims3 volume_dims, std::int64_t image_width, std::int64_t image_height,
                           double radius, std::vector<std::uint64_t> offsets,
                           std::vector<std::uint32_t> pixels, std::vector<double> weights)
    : dims_(volume_dims),
      width_(image_width),
      height_(image_height),
      radius_(radius),
      offsets_(std::move(offsets)),
      pixels_(std::move(pixels)),
      weights_(std::move(weights)) {
    if (offsets_.size() != static_cast<std::size_t>(dims_.count()) + 1 || pixels_.size() != weights_.size() ||
        offsets_.back() != pixels_.size())
        throw InvalidArgument("inconsistent weight matrix storage");
}

std::size_t WeightMatrix::memory_bytes() const {
    return offsets_.size() * sizeof(std::uint64_t) + pixels_.size() * sizeof(std::uint32_t) +
           weights_.size() * sizeof(double);
}

std::size_t estimate_weight_bytes(Dims3 dims, double radius) {
    const auto side = static_cast<std::size_t>(std::ceil(2.0 * radius + 1.0));
    const auto voxels = static_cast<std::size_t>(dims.count());
    return voxels * (sizeof(std::uint64_t) + side * side * (sizeof(std::uint32_t) + sizeof(double)));
}

WeightMatrix build_weight_matrix(const CameraModel& camera, Dims3 dims, const WeightOptions& options) {
    if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1) throw InvalidArgument("volume dimensions must be >= 1");
    if (!(options.radius > 0.0)) throw InvalidArgument("weighting radius must be positive");
    const std::size_t required = estimate_weight_bytes(dims, options.radius);
    if (required > options.memory_budget_bytes)
        throw ResourceError("weight matrix needs about " + std::to_string(required) + " bytes, budget is " +
                                std::to_string(options.memory_budget_bytes),
                            required);

    const double r = options.radius;
    const std::int64_t w = camera.image_width(), h = camera.image_height();
    const std::int64_t voxels = dims.count();

    // Visits the in-raster pixels of one voxel's footprint in row-major order.
    auto footprint = [&](std::int64_t v, auto&& emit) {
        const std::int64_t x = v % dims.nx, y = (v / dims.nx) % dims.ny, z = v / (dims.nx * dims.ny);
        const Vec2 c = camera.project({static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
        const auto u0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(c[0] - r)));
        const auto u1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::floor(c[0] + r)));
        const auto v0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(c[1] - r)));
        const auto v1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::floor(c[1] + r)));
        for (std::int64_t pv = v0; pv <= v1; ++pv) {
            for (std::int64_t pu = u0; pu <= u1; ++pu) {
                const double d = std::hypot(pu - c[0], pv - c[1]);
                const double wt = 1.0 - d / r;
                if (wt > 0.0) emit(static_cast<std::uint32_t>(pv * w + pu), wt);
            }
        }
    };

    std::vector<std::uint64_t> offsets(static_cast<std::size_t>(voxels) + 1, 0);
    parallel_for(0, voxels, [&](std::ptrdiff_t v) {
        std::uint64_t n = 0;
        footprint(v, [&](std::uint32_t, double) { ++n; });
        offsets[static_cast<std::size_t>(v) + 1] = n;
    });
    for (std::size_t i = 1; i < offsets.size(); ++i) offsets[i] += offsets[i - 1];

    std::vector<std::uint32_t> pixels(offsets.back());
    std::vector<double> weights(offsets.back());
    parallel_for(0, voxels, [&](std::ptrdiff_t v) {
        const std::size_t b = offsets[static_cast<std::size_t>(v)];
        std::size_t k = b;
        double total = 0.0;
        footprint(v, [&](std::uint32_t p, double wt) {
            pixels[k] = p;
            weights[k] = wt;
            total += wt;
            ++k;
        });
        for (std::size_t i = b; i < k; ++i) weights[i] /= total;
    });

    return {dims, w, h, r, std::move(offsets), std::move(pixels), std::move(weights)};
}

std::vector<WeightMatrix> build_weight_matrices(const CameraRig& rig, Dims3 dims, std::size_t budget) {
    const std::size_t per_camera = estimate_weight_bytes(dims, rig.weight_radius);
    const std::size_t required = per_camera * rig.cameras.size();
    if (required > budget)
        throw ResourceError("weight matrices need about " + std::to_string(required) + " bytes, budget is " +
                                std::to_string(budget),
                            required);
    std::vector<WeightMatrix> out;
    out.reserve(rig.cameras.size());
    for (const auto& cam : rig.cameras)
        out.push_back(build_weight_matrix(cam, dims, {rig.weight_radius, budget}));
    return out;
}

ProjectionImage forward_project(const VoxelVolume& volume, const WeightMatrix& weights,
                                const CameraModel& camera) {
    if (!(volume.dims() == weights.volume_dims()))
        throw InvalidArgument("forward_project: volume dimensions differ from weight matrix");
    if (camera.image_width() != weights.image_width() || camera.image_height() != weights.image_height())
        throw InvalidArgument("forward_project: camera raster differs from weight matrix");

    const auto values = volume.values();
    const ChunkPlan plan(static_cast<std::ptrdiff_t>(values.size()), kForwardChunks);
    const std::size_t pixels = static_cast<std::size_t>(camera.image_width() * camera.image_height());
    std::vector<std::vector<double>> partial(static_cast<std::size_t>(plan.chunks));

    parallel_for(0, plan.chunks, [&](std::ptrdiff_t c) {
        auto& acc = partial[static_cast<std::size_t>(c)];
        acc.assign(pixels, 0.0);
        for (auto v = plan.chunk_begin(c); v < plan.chunk_end(c); ++v) {
            const double e = values[static_cast<std::size_t>(v)];
            if (e == 0.0) continue;
            const auto row = weights.row(static_cast<std::size_t>(v));
            for (std::size_t k = 0; k < row.pixels.size(); ++k) acc[row.pixels[k]] += e * row.weights[k];
        }
    });

    ProjectionImage image(camera.image_width(), camera.image_height());
    auto out = image.values();
    for (const auto& acc : partial)
        for (std::size_t p = 0; p < pixels; ++p) out[p] += acc[p];
    return image;
}

}  // namespace tpr
