#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "tpr/geometry.hpp"
#include "tpr/grid.hpp"

namespace tpr {

/// Bilinear interpolation with pixel centers at integer coordinates. Returns
/// nullopt when the point is outside [0, W-1] x [0, H-1].
std::optional<double> sample_bilinear(const ProjectionImage& image, const Vec2& point);

/// Multiplicative line-of-sight estimate: E(v) = prod_j I_j(proj_j(v)).
/// Voxels that project off any raster are 0.
VoxelVolume mlos(const std::vector<ProjectionImage>& images, const CameraRig& rig, Dims3 volume_dims);

enum class MartFilter { none, gaussian3 };

struct MartConfig {
    int iterations = 10;
    double relaxation = 1.0;
    MartFilter filter = MartFilter::none;

    void validate() const;
};

/// Called after every full iteration (all cameras, then the filter).
using MartObserver = std::function<void(int iteration, const VoxelVolume& current)>;

/// Camera-sequential MART. Per camera j the reprojection W_j E is computed,
/// then every voxel is scaled by prod_p (I_j(p) / (W_j E)(p))^(mu w(v,p)) over
/// pixels with nonzero reprojection.
VoxelVolume mart(const std::vector<ProjectionImage>& images, const CameraRig& rig,
                 const std::vector<WeightMatrix>& weights, const VoxelVolume& init, const MartConfig& config,
                 const MartObserver& observer = {});

/// MART with a normalized 3x3x3 Gaussian (sigma 0.5 voxel) smoothing pass after
/// every iteration. Forces config.filter = gaussian3.
VoxelVolume sf_mart(const std::vector<ProjectionImage>& images, const CameraRig& rig,
                    const std::vector<WeightMatrix>& weights, const VoxelVolume& init, MartConfig config,
                    const MartObserver& observer = {});

/// Normalized 3x3x3 Gaussian smoothing. Near the faces the kernel is
/// renormalized over in-bounds taps so constant fields are preserved.
VoxelVolume gaussian_filter3(const VoxelVolume& volume, double sigma = 0.5);

/// sum_j sum_p |I_j(p) - (W_j E)(p)|
double reprojection_residual_l1(const std::vector<ProjectionImage>& images, const CameraRig& rig,
                                const std::vector<WeightMatrix>& weights, const VoxelVolume& volume);

}  // namespace tpr
