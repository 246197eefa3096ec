#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "tpr/grid.hpp"

namespace tpr {

/// Z-X-Z Euler angles in radians, wrapped into [-pi, pi).
class EulerAngles {
public:
    EulerAngles() = default;
    EulerAngles(double alpha, double beta, double gamma);

    static EulerAngles from_degrees(double alpha, double beta, double gamma);

    double alpha() const { return alpha_; }
    double beta() const { return beta_; }
    double gamma() const { return gamma_; }

private:
    double alpha_ = 0.0;
    double beta_ = 0.0;
    double gamma_ = 0.0;
};

using RotationMatrix = std::array<std::array<double, 3>, 3>;

/// T = Rz(alpha) Rx(beta) Rz(gamma). Maps world coordinates to the camera frame,
/// where z' is the line of sight.
RotationMatrix rotation_from_euler(const EulerAngles& angles);

/// Parallel-projection camera. The projection rows are the first two rows of
/// the rotation; pixel = scale * (P * point) + origin_offset.
class CameraModel {
public:
    CameraModel(EulerAngles angles, std::int64_t image_width, std::int64_t image_height,
                Vec2 origin_offset = {0.0, 0.0}, double scale = 1.0);

    const EulerAngles& angles() const { return angles_; }
    const RotationMatrix& rotation() const { return rotation_; }
    std::array<Vec3, 2> projection() const { return {rotation_[0], rotation_[1]}; }
    std::int64_t image_width() const { return width_; }
    std::int64_t image_height() const { return height_; }
    const Vec2& origin_offset() const { return offset_; }
    double scale() const { return scale_; }

    Vec2 project(const Vec3& point) const;
    bool operator==(const CameraModel& o) const;

private:
    EulerAngles angles_;
    RotationMatrix rotation_{};
    std::int64_t width_;
    std::int64_t height_;
    Vec2 offset_;
    double scale_;
};

Vec2 project_point(const CameraModel& camera, const Vec3& point);

/// A set of cameras plus the weighting radius shared by all views.
struct CameraRig {
    std::vector<CameraModel> cameras;
    double weight_radius = 1.5;
};

/// Four views tilted 30 degrees from the z axis, looking from +-y and +-x.
/// Every camera gets the same raster, sized to contain the projection of the
/// whole volume and centered on the volume center.
CameraRig default_rig(Dims3 volume_dims, double tilt_degrees = 30.0);

struct WeightOptions {
    double radius = 1.5;
    std::size_t memory_budget_bytes = std::size_t{4} << 30;
};

/// Sparse voxel-to-pixel weights of one camera in compressed-row form.
/// Entries of voxel v are [offsets[v], offsets[v+1]) in pixels/weights.
class WeightMatrix {
public:
    struct Row {
        std::span<const std::uint32_t> pixels;
        std::span<const double> weights;
    };

    WeightMatrix() = default;
    WeightMatrix(Dims3 volume_dims, std::int64_t image_width, std::int64_t image_height,
                 double radius, std::vector<std::uint64_t> offsets,
                 std::vector<std::uint32_t> pixels, std::vector<double> weights);

    const Dims3& volume_dims() const { return dims_; }
    std::int64_t image_width() const { return width_; }
    std::int64_t image_height() const { return height_; }
    double radius() const { return radius_; }
    std::size_t entry_count() const { return pixels_.size(); }
    std::size_t memory_bytes() const;

    Row row(std::size_t voxel) const {
        const auto b = offsets_[voxel], e = offsets_[voxel + 1];
        return {std::span(pixels_).subspan(b, e - b), std::span(weights_).subspan(b, e - b)};
    }

private:
    Dims3 dims_{};
    std::int64_t width_ = 0;
    std::int64_t height_ = 0;
    double radius_ = 0.0;
    std::vector<std::uint64_t> offsets_;
    std::vector<std::uint32_t> pixels_;
    std::vector<double> weights_;
};

/// Upper-bound estimate of the bytes needed to store one camera's weights.
std::size_t estimate_weight_bytes(Dims3 volume_dims, double radius);

WeightMatrix build_weight_matrix(const CameraModel& camera, Dims3 volume_dims,
                                 const WeightOptions& options = {});

std::vector<WeightMatrix> build_weight_matrices(const CameraRig& rig, Dims3 volume_dims,
                                                std::size_t memory_budget_bytes = std::size_t{4} << 30);

/// image(p) = sum over voxels of E(v) * w(v, p).
ProjectionImage forward_project(const VoxelVolume& volume, const WeightMatrix& weights,
                                const CameraModel& camera);

}  // namespace tpr
