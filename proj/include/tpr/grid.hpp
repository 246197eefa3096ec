#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tpr {

using Vec2 = std::array<double, 2>;
using Vec3 = std::array<double, 3>;

/// Extent of a voxel grid; x is the fastest-varying axis in memory.
struct Dims3 {
    std::int64_t nx = 0;
    std::int64_t ny = 0;
    std::int64_t nz = 0;

    std::int64_t count() const { return nx * ny * nz; }
    bool operator==(const Dims3&) const = default;
};

/// Dense 3D intensity grid. Voxel (x, y, z) has its center at the continuous
/// coordinate (x, y, z) in voxel units.
class VoxelVolume {
public:
    VoxelVolume() = default;
    explicit VoxelVolume(Dims3 dims, double fill = 0.0);
    VoxelVolume(Dims3 dims, std::vector<double> values);

    const Dims3& dims() const { return dims_; }
    std::size_t size() const { return values_.size(); }

    std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return static_cast<std::size_t>((z * dims_.ny + y) * dims_.nx + x);
    }
    double& at(std::int64_t x, std::int64_t y, std::int64_t z) { return values_[index(x, y, z)]; }
    double at(std::int64_t x, std::int64_t y, std::int64_t z) const { return values_[index(x, y, z)]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    double max() const;
    double sum() const;

    bool operator==(const VoxelVolume&) const = default;

private:
    Dims3 dims_{};
    std::vector<double> values_;
};

/// Dense 2D camera image. Pixel (u, v) has its center at (u, v) in pixel units.
class ProjectionImage {
public:
    ProjectionImage() = default;
    ProjectionImage(std::int64_t width, std::int64_t height, double fill = 0.0);

    std::int64_t width() const { return width_; }
    std::int64_t height() const { return height_; }
    std::size_t size() const { return values_.size(); }

    double& at(std::int64_t u, std::int64_t v) { return values_[static_cast<std::size_t>(v * width_ + u)]; }
    double at(std::int64_t u, std::int64_t v) const { return values_[static_cast<std::size_t>(v * width_ + u)]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    double max() const;
    double sum() const;

    bool operator==(const ProjectionImage&) const = default;

private:
    std::int64_t width_ = 0;
    std::int64_t height_ = 0;
    std::vector<double> values_;
};

}  // namespace tpr
