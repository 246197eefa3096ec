#include "tpr/nn/tiling.hpp"

#include <algorithm>
#include <string>

#include "tpr/error.hpp"
#include "tpr/parallel.hpp"

namespace tpr::nn {

std::vector<TileSpan> plan_tiles(std::int64_t extent, std::int64_t tile, std::int64_t halo) {
    if (extent < 1) throw InvalidArgument("tiling: empty axis");
    if (tile < 1 || halo < 0) throw InvalidArgument("tiling: bad tile parameters");
    if (extent <= tile) return {{0, 0, extent}};
    const std::int64_t stride = tile - 2 * halo;
    if (stride < 1)
        throw InvalidArgument("tiling: tile of " + std::to_string(tile) + " cannot keep a " + std::to_string(halo) +
                              "-voxel halo on both faces");
    std::vector<std::int64_t> starts{0};
    while (starts.back() + tile < extent) starts.push_back(std::min(starts.back() + stride, extent - tile));

    std::vector<TileSpan> spans(starts.size());
    for (std::size_t i = 0; i < starts.size(); ++i) {
        spans[i].start = starts[i];
        spans[i].own_begin = i == 0 ? 0 : (starts[i] + starts[i - 1] + tile) / 2;
        spans[i].own_end = i + 1 == starts.size() ? extent : (starts[i + 1] + starts[i] + tile) / 2;
    }
    return spans;
}

template <typename T>
VoxelVolume infer_tiled(const NetworkT<T>& net, const VoxelVolume& volume, const TilingOptions& options) {
    const auto& d = volume.dims();
    if (d.nx < 1 || d.ny < 1 || d.nz < 1) throw InvalidArgument("infer_tiled: empty volume");
    const double peak = volume.max();
    VoxelVolume out(d);
    if (!(peak > 0.0)) return out;

    const auto tx = plan_tiles(d.nx, options.tile.nx, options.halo);
    const auto ty = plan_tiles(d.ny, options.tile.ny, options.halo);
    const auto tz = plan_tiles(d.nz, options.tile.nz, options.halo);
    const auto count = static_cast<std::ptrdiff_t>(tx.size() * ty.size() * tz.size());
    const double inv_peak = 1.0 / peak;

    parallel_for(0, count, [&](std::ptrdiff_t t) {
        const auto& sx = tx[static_cast<std::size_t>(t) % tx.size()];
        const auto& sy = ty[(static_cast<std::size_t>(t) / tx.size()) % ty.size()];
        const auto& sz = tz[static_cast<std::size_t>(t) / (tx.size() * ty.size())];
        Tensor4<T> tile({options.tile.nx, options.tile.ny, options.tile.nz, 1});
        for (std::int64_t z = 0; z < options.tile.nz && sz.start + z < d.nz; ++z)
            for (std::int64_t y = 0; y < options.tile.ny && sy.start + y < d.ny; ++y)
                for (std::int64_t x = 0; x < options.tile.nx && sx.start + x < d.nx; ++x)
                    tile.at(x, y, z, 0) = static_cast<T>(volume.at(sx.start + x, sy.start + y, sz.start + z) * inv_peak);
        const Tensor4<T> pred = forward_any(net, tile);
        for (std::int64_t z = sz.own_begin; z < sz.own_end; ++z)
            for (std::int64_t y = sy.own_begin; y < sy.own_end; ++y)
                for (std::int64_t x = sx.own_begin; x < sx.own_end; ++x)
                    out.at(x, y, z) =
                        static_cast<double>(pred.at(x - sx.start, y - sy.start, z - sz.start, 0)) * peak;
    });
    return out;
}

template VoxelVolume infer_tiled(const NetworkT<float>&, const VoxelVolume&, const TilingOptions&);
template VoxelVolume infer_tiled(const NetworkT<double>&, const VoxelVolume&, const TilingOptions&);

}  // namespace tpr::nn
