#include "tpr/grid.hpp"

#include <algorithm>
#include <numeric>

#include "tpr/error.hpp"

namespace tpr {

VoxelVolume::VoxelVolume(Dims3 dims, double fill)
    : dims_(dims) {
    if (dims.nx < 0 || dims.ny < 0 || dims.nz < 0) throw InvalidArgument("negative volume dimension");
    values_.assign(static_cast<std::size_t>(dims.count()), fill);
}

VoxelVolume::VoxelVolume(Dims3 dims, std::vector<double> values)
    : dims_(dims), values_(std::move(values)) {
    if (dims.nx < 0 || dims.ny < 0 || dims.nz < 0) throw InvalidArgument("negative volume dimension");
    if (values_.size() != static_cast<std::size_t>(dims.count()))
        throw InvalidArgument("volume value count does not match dimensions");
}

double VoxelVolume::max() const {
    return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end());
}

double VoxelVolume::sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

ProjectionImage::ProjectionImage(std::int64_t width, std::int64_t height, double fill)
    : width_(width), height_(height) {
    if (width < 0 || height < 0) throw InvalidArgument("negative image dimension");
    values_.assign(static_cast<std::size_t>(width * height), fill);
}

double ProjectionImage::max() const {
    return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end());
}

double ProjectionImage::sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

}  // namespace tpr
