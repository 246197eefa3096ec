#pragma once

#include <cstdint>
#include <vector>

#include "tpr/grid.hpp"
#include "tpr/nn/network.hpp"

namespace tpr::nn {

/// One tile along an axis: it reads [start, start + tile) and owns
/// [own_begin, own_end) of the output.
struct TileSpan {
    std::int64_t start = 0;
    std::int64_t own_begin = 0;
    std::int64_t own_end = 0;
};

/// Receptive-field half-width of 12 stacked 3x3x3 convolutions.
inline constexpr std::int64_t kReceptiveHalfWidth = 12;

/// Places tiles so that every owned voxel is at least `halo` voxels from any
/// tile face that is not a volume face: adjacent tiles overlap by at least
/// 2 * halo and ownership is cut at the middle of each overlap. An axis
/// shorter than the tile gets one zero-padded tile.
std::vector<TileSpan> plan_tiles(std::int64_t extent, std::int64_t tile, std::int64_t halo);

struct TilingOptions {
    Dims3 tile{64, 64, 32};
    std::int64_t halo = kReceptiveHalfWidth;
};

/// Normalizes by the volume maximum, runs the network tile by tile, stitches
/// the owned regions and rescales by the maximum. All-zero volumes map to zero.
template <typename T>
VoxelVolume infer_tiled(const NetworkT<T>& net, const VoxelVolume& volume, const TilingOptions& options = {});

}  // namespace tpr::nn
