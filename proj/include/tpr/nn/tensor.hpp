#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tpr/grid.hpp"

namespace tpr::nn {

/// Nx x Ny x Nz x Q, channels innermost, then x, y, z.
struct Shape4 {
    std::int64_t nx = 0;
    std::int64_t ny = 0;
    std::int64_t nz = 0;
    std::int64_t nc = 1;

    std::int64_t voxels() const { return nx * ny * nz; }
    std::int64_t count() const { return voxels() * nc; }
    Dims3 spatial() const { return {nx, ny, nz}; }
    bool operator==(const Shape4&) const = default;
};

template <typename T>
class Tensor4 {
public:
    using value_type = T;

    Tensor4() = default;
    explicit Tensor4(Shape4 shape, T fill = T(0))
        : shape_(shape), data_(static_cast<std::size_t>(shape.count()), fill) {}

    const Shape4& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }

    std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z, std::int64_t c) const {
        return static_cast<std::size_t>(((z * shape_.ny + y) * shape_.nx + x) * shape_.nc + c);
    }
    T& at(std::int64_t x, std::int64_t y, std::int64_t z, std::int64_t c) { return data_[index(x, y, z, c)]; }
    T at(std::int64_t x, std::int64_t y, std::int64_t z, std::int64_t c) const { return data_[index(x, y, z, c)]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    /// Pointer to voxel (0, y, z), channel 0.
    T* row(std::int64_t y, std::int64_t z) { return data_.data() + index(0, y, z, 0); }
    const T* row(std::int64_t y, std::int64_t z) const { return data_.data() + index(0, y, z, 0); }

    bool operator==(const Tensor4&) const = default;

private:
    Shape4 shape_{};
    std::vector<T> data_;
};

template <typename T>
Tensor4<T> to_tensor(const VoxelVolume& volume, double scale = 1.0) {
    const auto& d = volume.dims();
    Tensor4<T> t({d.nx, d.ny, d.nz, 1});
    const auto src = volume.values();
    for (std::size_t i = 0; i < src.size(); ++i) t.values()[i] = static_cast<T>(src[i] * scale);
    return t;
}

template <typename T>
VoxelVolume to_volume(const Tensor4<T>& t, double scale = 1.0) {
    VoxelVolume v(t.shape().spatial());
    auto dst = v.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(t.values()[i]) * scale;
    return v;
}

}  // namespace tpr::nn
