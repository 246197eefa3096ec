#include "tpr/algebraic.hpp"

#include <array>
#include <cmath>

#include "tpr/error.hpp"
#include "tpr/parallel.hpp"

namespace tpr {

namespace {

void check_images(const std::vector<ProjectionImage>& images, const CameraRig& rig) {
    if (images.size() != rig.cameras.size())
        throw InvalidArgument("expected one image per camera (" + std::to_string(rig.cameras.size()) + "), got " +
                              std::to_string(images.size()));
    for (std::size_t j = 0; j < images.size(); ++j) {
        const auto& cam = rig.cameras[j];
        if (images[j].width() != cam.image_width() || images[j].height() != cam.image_height())
            throw InvalidArgument("image " + std::to_string(j) + " does not match its camera raster");
    }
}

}  // namespace

std::optional<double> sample_bilinear(const ProjectionImage& image, const Vec2& p) {
    const double u = p[0], v = p[1];
    if (!(u >= 0.0 && v >= 0.0 && u <= image.width() - 1 && v <= image.height() - 1)) return std::nullopt;
    const auto u0 = static_cast<std::int64_t>(u), v0 = static_cast<std::int64_t>(v);
    const auto u1 = std::min(u0 + 1, image.width() - 1), v1 = std::min(v0 + 1, image.height() - 1);
    const double fu = u - u0, fv = v - v0;
    const double top = image.at(u0, v0) * (1.0 - fu) + image.at(u1, v0) * fu;
    const double bottom = image.at(u0, v1) * (1.0 - fu) + image.at(u1, v1) * fu;
    return top * (1.0 - fv) + bottom * fv;
}

VoxelVolume mlos(const std::vector<ProjectionImage>& images, const CameraRig& rig, Dims3 dims) {
    check_images(images, rig);
    if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1) throw InvalidArgument("volume dimensions must be >= 1");
    VoxelVolume out(dims);
    parallel_for(0, dims.nz, [&](std::ptrdiff_t z) {
        for (std::int64_t y = 0; y < dims.ny; ++y) {
            for (std::int64_t x = 0; x < dims.nx; ++x) {
                const Vec3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
                double e = 1.0;
                for (std::size_t j = 0; j < images.size() && e != 0.0; ++j) {
                    const auto s = sample_bilinear(images[j], rig.cameras[j].project(p));
                    e = s ? e * *s : 0.0;
                }
                out.at(x, y, z) = e;
            }
        }
    });
    return out;
}

void MartConfig::validate() const {
    if (iterations < 1) throw InvalidArgument("MART iterations must be >= 1");
    if (!(relaxation > 0.0 && relaxation <= 1.0)) throw InvalidArgument("MART relaxation must be in (0, 1]");
}

VoxelVolume mart(const std::vector<ProjectionImage>& images, const CameraRig& rig,
                 const std::vector<WeightMatrix>& weights, const VoxelVolume& init, const MartConfig& config,
                 const MartObserver& observer) {
    config.validate();
    check_images(images, rig);
    if (weights.size() != rig.cameras.size()) throw InvalidArgument("expected one weight matrix per camera");
    for (const auto& w : weights)
        if (!(w.volume_dims() == init.dims())) throw InvalidArgument("initial volume does not match weight matrices");
    for (const auto& img : images)
        for (double v : img.values())
            if (v < 0.0) throw InvalidArgument("MART: negative image intensity");
    for (double v : init.values())
        if (!(v >= 0.0)) throw InvalidArgument("MART: initial volume must be nonnegative");

    VoxelVolume e = init;
    auto values = e.values();
    const auto voxels = static_cast<std::ptrdiff_t>(values.size());
    std::vector<double> log_ratio;

    for (int it = 0; it < config.iterations; ++it) {
        for (std::size_t j = 0; j < rig.cameras.size(); ++j) {
            const ProjectionImage reproj = forward_project(e, weights[j], rig.cameras[j]);
            const auto measured = images[j].values();
            const auto projected = reproj.values();
            // Skipped pixels (zero reprojection) contribute exponent 0.
            log_ratio.assign(projected.size(), 0.0);
            for (std::size_t p = 0; p < projected.size(); ++p) {
                if (projected[p] > 0.0)
                    log_ratio[p] = measured[p] > 0.0 ? std::log(measured[p] / projected[p])
                                                     : -std::numeric_limits<double>::infinity();
            }
            const double mu = config.relaxation;
            const auto& wm = weights[j];
            parallel_for(0, voxels, [&](std::ptrdiff_t v) {
                double& ev = values[static_cast<std::size_t>(v)];
                if (ev == 0.0) return;
                const auto row = wm.row(static_cast<std::size_t>(v));
                double acc = 0.0;
                for (std::size_t k = 0; k < row.pixels.size(); ++k) {
                    const double lr = log_ratio[row.pixels[k]];
                    if (lr != 0.0) acc += row.weights[k] * lr;
                }
                if (acc != 0.0) ev *= std::exp(mu * acc);
            });
        }
        if (config.filter == MartFilter::gaussian3) {
            e = gaussian_filter3(e);
            values = e.values();
        }
        if (observer) observer(it + 1, e);
    }
    return e;
}

VoxelVolume sf_mart(const std::vector<ProjectionImage>& images, const CameraRig& rig,
                    const std::vector<WeightMatrix>& weights, const VoxelVolume& init, MartConfig config,
                    const MartObserver& observer) {
    config.filter = MartFilter::gaussian3;
    return mart(images, rig, weights, init, config, observer);
}

VoxelVolume gaussian_filter3(const VoxelVolume& volume, double sigma) {
    if (!(sigma > 0.0)) throw InvalidArgument("filter sigma must be positive");
    std::array<double, 3> g1{};
    for (int i = 0; i < 3; ++i) g1[static_cast<std::size_t>(i)] = std::exp(-((i - 1) * (i - 1)) / (2.0 * sigma * sigma));
    const auto& d = volume.dims();
    VoxelVolume out(d);
    parallel_for(0, d.nz, [&](std::ptrdiff_t z) {
        for (std::int64_t y = 0; y < d.ny; ++y) {
            for (std::int64_t x = 0; x < d.nx; ++x) {
                double acc = 0.0, norm = 0.0;
                for (int dz = -1; dz <= 1; ++dz) {
                    const std::int64_t zz = z + dz;
                    if (zz < 0 || zz >= d.nz) continue;
                    for (int dy = -1; dy <= 1; ++dy) {
                        const std::int64_t yy = y + dy;
                        if (yy < 0 || yy >= d.ny) continue;
                        for (int dx = -1; dx <= 1; ++dx) {
                            const std::int64_t xx = x + dx;
                            if (xx < 0 || xx >= d.nx) continue;
                            const double w = g1[dx + 1] * g1[dy + 1] * g1[dz + 1];
                            acc += w * volume.at(xx, yy, zz);
                            norm += w;
                        }
                    }
                }
                out.at(x, y, z) = acc / norm;
            }
        }
    });
    return out;
}

double reprojection_residual_l1(const std::vector<ProjectionImage>& images, const CameraRig& rig,
                                const std::vector<WeightMatrix>& weights, const VoxelVolume& volume) {
    check_images(images, rig);
    double total = 0.0;
    for (std::size_t j = 0; j < images.size(); ++j) {
        const auto reproj = forward_project(volume, weights[j], rig.cameras[j]);
        const auto a = images[j].values();
        const auto b = reproj.values();
        for (std::size_t p = 0; p < a.size(); ++p) total += std::abs(a[p] - b[p]);
    }
    return total;
}

}  // namespace tpr
