#include "tpr/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "tpr/error.hpp"
#include "tpr/parallel.hpp"

namespace tpr::nn {

namespace {

template <typename T, int N>
struct Lanes {
    typedef T type __attribute__((vector_size(sizeof(T) * N)));
};

template <typename V, typename T>
V load(const T* p) {
    V v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

template <typename V, typename T>
void store(T* p, const V& v) {
    std::memcpy(p, &v, sizeof v);
}

// out[x, :16] += sum_q in[x, q] * w[q, :16] for x in [0, count)
template <typename T, int QI>
void accumulate_row_q16(T* out, const T* in, const T* w, std::int64_t count) {
    using V = typename Lanes<T, 16>::type;
    V wv[QI];
    for (int q = 0; q < QI; ++q) wv[q] = load<V>(w + q * 16);
    for (std::int64_t x = 0; x < count; ++x) {
        const T* ip = in + x * QI;
        if constexpr (QI % 4 == 0) {
            // Four independent chains keep the FMA pipes busy.
            V a0 = load<V>(out + x * 16), a1{}, a2{}, a3{};
            for (int q = 0; q < QI; q += 4) {
                a0 += ip[q] * wv[q];
                a1 += ip[q + 1] * wv[q + 1];
                a2 += ip[q + 2] * wv[q + 2];
                a3 += ip[q + 3] * wv[q + 3];
            }
            store(out + x * 16, (a0 + a1) + (a2 + a3));
        } else {
            V acc = load<V>(out + x * 16);
            for (int q = 0; q < QI; ++q) acc += ip[q] * wv[q];
            store(out + x * 16, acc);
        }
    }
}

template <typename T>
void accumulate_row_generic(T* out, const T* in, const T* w, std::int64_t count, std::int64_t qi, std::int64_t qo) {
    for (std::int64_t x = 0; x < count; ++x) {
        T* op = out + x * qo;
        const T* ip = in + x * qi;
        for (std::int64_t q = 0; q < qi; ++q) {
            const T s = ip[q];
            const T* wq = w + q * qo;
            for (std::int64_t o = 0; o < qo; ++o) op[o] += s * wq[o];
        }
    }
}

struct TapRange {
    std::int64_t x0, x1;  // output x range for which x + dx is in bounds
};

TapRange tap_range(std::int64_t nx, std::int64_t dx) { return {std::max<std::int64_t>(0, -dx), std::min(nx, nx - dx)}; }

void check_kernel(std::int64_t l, std::int64_t m, std::int64_t n) {
    if (l < 1 || m < 1 || n < 1 || l % 2 == 0 || m % 2 == 0 || n % 2 == 0)
        throw InvalidArgument("convolution kernels must have odd spatial extents");
}

// 16 -> 1 channels: per-lane partial sums over all taps, one horizontal sum per voxel.
template <typename T>
void conv_rows_q16_to_1(const ConvKernel<T>& k, const Tensor4<T>& in, Tensor4<T>& out, std::int64_t z) {
    using V = typename Lanes<T, 16>::type;
    const auto& s = in.shape();
    const std::int64_t hx = k.l / 2, hy = k.m / 2, hz = k.n / 2;
    std::vector<V> acc(static_cast<std::size_t>(s.nx));
    for (std::int64_t y = 0; y < s.ny; ++y) {
        std::fill(acc.begin(), acc.end(), V{});
        for (std::int64_t kz = 0; kz < k.n; ++kz) {
            const std::int64_t iz = z + kz - hz;
            if (iz < 0 || iz >= s.nz) continue;
            for (std::int64_t ky = 0; ky < k.m; ++ky) {
                const std::int64_t iy = y + ky - hy;
                if (iy < 0 || iy >= s.ny) continue;
                const T* irow = in.row(iy, iz);
                for (std::int64_t kx = 0; kx < k.l; ++kx) {
                    const std::int64_t dx = kx - hx;
                    const auto [x0, x1] = tap_range(s.nx, dx);
                    const V w = load<V>(k.data.data() + k.index(kx, ky, kz, 0, 0));
                    for (std::int64_t x = x0; x < x1; ++x) acc[static_cast<std::size_t>(x)] += load<V>(irow + (x + dx) * 16) * w;
                }
            }
        }
        T* orow = out.row(y, z);
        for (std::int64_t x = 0; x < s.nx; ++x) {
            T sum = 0;
            for (int q = 0; q < 16; ++q) sum += acc[static_cast<std::size_t>(x)][q];
            orow[x] = sum;
        }
    }
}

template <typename T>
std::vector<double> reduce_partials(const std::vector<std::vector<double>>& partials, std::size_t n) {
    std::vector<double> total(n, 0.0);
    for (const auto& p : partials)
        for (std::size_t i = 0; i < n; ++i) total[i] += p[i];
    return total;
}

}  // namespace

template <typename T>
ConvKernel<T>::ConvKernel(std::int64_t l_, std::int64_t m_, std::int64_t n_, std::int64_t qi, std::int64_t qo)
    : l(l_), m(m_), n(n_), q_in(qi), q_out(qo) {
    check_kernel(l, m, n);
    if (qi < 1 || qo < 1) throw InvalidArgument("kernel channel counts must be >= 1");
    data.assign(static_cast<std::size_t>(l * m * n * qi * qo), T(0));
}

template <typename T>
Tensor4<T> conv3d(const ConvKernel<T>& k, const Tensor4<T>& input, int stride) {
    if (stride != 1) throw InvalidArgument("only stride 1 is supported");
    check_kernel(k.l, k.m, k.n);
    const auto& s = input.shape();
    if (k.q_in != s.nc)
        throw InvalidArgument("conv3d: kernel expects " + std::to_string(k.q_in) + " input channels, got " +
                              std::to_string(s.nc));
    Tensor4<T> out({s.nx, s.ny, s.nz, k.q_out});
    const std::int64_t hx = k.l / 2, hy = k.m / 2, hz = k.n / 2;
    const std::int64_t qi = k.q_in, qo = k.q_out;

    parallel_for(0, s.nz, [&](std::ptrdiff_t z) {
        if (qi == 16 && qo == 1) {
            conv_rows_q16_to_1(k, input, out, z);
            return;
        }
        for (std::int64_t y = 0; y < s.ny; ++y) {
            T* orow = out.row(y, z);
            for (std::int64_t kz = 0; kz < k.n; ++kz) {
                const std::int64_t iz = z + kz - hz;
                if (iz < 0 || iz >= s.nz) continue;
                for (std::int64_t ky = 0; ky < k.m; ++ky) {
                    const std::int64_t iy = y + ky - hy;
                    if (iy < 0 || iy >= s.ny) continue;
                    const T* irow = input.row(iy, iz);
                    for (std::int64_t kx = 0; kx < k.l; ++kx) {
                        const std::int64_t dx = kx - hx;
                        const auto [x0, x1] = tap_range(s.nx, dx);
                        if (x1 <= x0) continue;
                        const T* w = k.data.data() + k.index(kx, ky, kz, 0, 0);
                        T* o = orow + x0 * qo;
                        const T* i = irow + (x0 + dx) * qi;
                        if (qo == 16 && qi == 16)
                            accumulate_row_q16<T, 16>(o, i, w, x1 - x0);
                        else if (qo == 16 && qi == 1)
                            accumulate_row_q16<T, 1>(o, i, w, x1 - x0);
                        else
                            accumulate_row_generic(o, i, w, x1 - x0, qi, qo);
                    }
                }
            }
        }
    });
    return out;
}

template <typename T>
ConvKernel<T> flip_transpose(const ConvKernel<T>& k) {
    ConvKernel<T> f(k.l, k.m, k.n, k.q_out, k.q_in);
    for (std::int64_t kz = 0; kz < k.n; ++kz)
        for (std::int64_t ky = 0; ky < k.m; ++ky)
            for (std::int64_t kx = 0; kx < k.l; ++kx)
                for (std::int64_t q = 0; q < k.q_in; ++q)
                    for (std::int64_t o = 0; o < k.q_out; ++o)
                        f.at(k.l - 1 - kx, k.m - 1 - ky, k.n - 1 - kz, o, q) = k.at(kx, ky, kz, q, o);
    return f;
}

template <typename T>
Tensor4<T> conv3d_backward_input(const ConvKernel<T>& k, const Tensor4<T>& grad_output) {
    if (grad_output.shape().nc != k.q_out) throw InvalidArgument("conv3d_backward_input: channel mismatch");
    return conv3d(flip_transpose(k), grad_output);
}

template <typename T>
std::vector<double> conv3d_backward_kernel(const ConvKernel<T>& k, std::span<const Tensor4<T>> inputs,
                                           std::span<const Tensor4<T>> grads) {
    if (inputs.size() != grads.size() || inputs.empty())
        throw InvalidArgument("conv3d_backward_kernel: batch size mismatch");
    const auto& s = inputs.front().shape();
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        if (!(inputs[b].shape() == s) || grads[b].shape().spatial() != s.spatial() || grads[b].shape().nc != k.q_out ||
            s.nc != k.q_in)
            throw InvalidArgument("conv3d_backward_kernel: shape mismatch");
    }
    const std::int64_t hx = k.l / 2, hy = k.m / 2, hz = k.n / 2;
    const std::int64_t qi = k.q_in, qo = k.q_out;
    const std::size_t ksize = k.data.size();
    const auto items = static_cast<std::ptrdiff_t>(inputs.size()) * s.nz;
    std::vector<std::vector<double>> partials(static_cast<std::size_t>(items));

    parallel_for(0, items, [&](std::ptrdiff_t item) {
        const auto b = static_cast<std::size_t>(item / s.nz);
        const std::int64_t z = item % s.nz;
        auto& part = partials[static_cast<std::size_t>(item)];
        part.assign(ksize, 0.0);
        const Tensor4<T>& x_in = inputs[b];
        const Tensor4<T>& g = grads[b];
        using V = typename Lanes<T, 16>::type;
        // Per tap, the whole z-slice is accumulated before spilling to double.
        for (std::int64_t kz = 0; kz < k.n; ++kz) {
            const std::int64_t iz = z + kz - hz;
            if (iz < 0 || iz >= s.nz) continue;
            for (std::int64_t ky = 0; ky < k.m; ++ky) {
                const std::int64_t y0 = std::max<std::int64_t>(0, hy - ky), y1 = std::min(s.ny, s.ny + hy - ky);
                for (std::int64_t kx = 0; kx < k.l; ++kx) {
                    const std::int64_t dx = kx - hx;
                    const auto [x0, x1] = tap_range(s.nx, dx);
                    double* dst = part.data() + k.index(kx, ky, kz, 0, 0);
                    if (qo == 16 && (qi == 16 || qi == 1)) {
                        auto slab = [&]<int QI>() {
                            V acc[QI] = {};
                            for (std::int64_t y = y0; y < y1; ++y) {
                                const T* grow = g.row(y, z);
                                const T* irow = x_in.row(y + ky - hy, iz);
                                for (std::int64_t x = x0; x < x1; ++x) {
                                    const V gv = load<V>(grow + x * 16);
                                    const T* ip = irow + (x + dx) * QI;
                                    for (int q = 0; q < QI; ++q) acc[q] += ip[q] * gv;
                                }
                            }
                            for (int q = 0; q < QI; ++q)
                                for (int o = 0; o < 16; ++o) dst[q * 16 + o] += static_cast<double>(acc[q][o]);
                        };
                        if (qi == 16)
                            slab.template operator()<16>();
                        else
                            slab.template operator()<1>();
                        continue;
                    }
                    if (qo == 1 && qi == 16) {
                        V a0{}, a1{};
                        for (std::int64_t y = y0; y < y1; ++y) {
                            const T* grow = g.row(y, z);
                            const T* irow = x_in.row(y + ky - hy, iz);
                            std::int64_t x = x0;
                            for (; x + 1 < x1; x += 2) {
                                a0 += load<V>(irow + (x + dx) * 16) * grow[x];
                                a1 += load<V>(irow + (x + 1 + dx) * 16) * grow[x + 1];
                            }
                            if (x < x1) a0 += load<V>(irow + (x + dx) * 16) * grow[x];
                        }
                        const V acc = a0 + a1;
                        for (int q = 0; q < 16; ++q) dst[q] += static_cast<double>(acc[q]);
                        continue;
                    }
                    for (std::int64_t y = y0; y < y1; ++y) {
                        const T* grow = g.row(y, z);
                        const T* irow = x_in.row(y + ky - hy, iz);
                        for (std::int64_t x = x0; x < x1; ++x) {
                            const T* ip = irow + (x + dx) * qi;
                            const T* gp = grow + x * qo;
                            for (std::int64_t q = 0; q < qi; ++q)
                                for (std::int64_t o = 0; o < qo; ++o)
                                    dst[q * qo + o] += static_cast<double>(ip[q]) * static_cast<double>(gp[o]);
                        }
                    }
                }
            }
        }
    });
    return reduce_partials<T>(partials, ksize);
}

template <typename T>
BatchNormParams<T>::BatchNormParams(std::int64_t channels)
    : scale(static_cast<std::size_t>(channels), T(1)),
      shift(static_cast<std::size_t>(channels), T(0)),
      running_mean(static_cast<std::size_t>(channels), T(0)),
      running_var(static_cast<std::size_t>(channels), T(1)) {}

namespace {

// Per-channel sums of f(value, channel) over the whole batch, reduced in a
// fixed (item, z) order.
template <typename T, typename F>
std::vector<double> channel_sums(std::span<const Tensor4<T>> batch, std::int64_t channels, F&& f) {
    const auto& s = batch.front().shape();
    const auto items = static_cast<std::ptrdiff_t>(batch.size()) * s.nz;
    std::vector<std::vector<double>> partials(static_cast<std::size_t>(items));
    parallel_for(0, items, [&](std::ptrdiff_t item) {
        const auto b = static_cast<std::size_t>(item / s.nz);
        const std::int64_t z = item % s.nz;
        auto& part = partials[static_cast<std::size_t>(item)];
        part.assign(static_cast<std::size_t>(channels), 0.0);
        const T* p = batch[b].row(0, z);
        const std::int64_t n = s.nx * s.ny;
        for (std::int64_t v = 0; v < n; ++v)
            for (std::int64_t c = 0; c < channels; ++c)
                part[static_cast<std::size_t>(c)] += f(static_cast<double>(p[v * channels + c]), c, b, z, v);
    });
    return reduce_partials<T>(partials, static_cast<std::size_t>(channels));
}

template <typename T>
void check_bn(std::span<const Tensor4<T>> batch, std::int64_t channels) {
    if (batch.empty()) throw InvalidArgument("batch_norm: empty batch in training mode");
    for (const auto& t : batch) {
        if (t.shape().nc != channels) throw InvalidArgument("batch_norm: channel count mismatch");
        if (!(t.shape() == batch.front().shape())) throw InvalidArgument("batch_norm: batch shape mismatch");
    }
}

}  // namespace

template <typename T>
BatchNormStats batch_norm_train(std::span<Tensor4<T>> batch, BatchNormParams<T>& params) {
    const std::int64_t c = params.channels();
    std::span<const Tensor4<T>> cbatch(batch.data(), batch.size());
    check_bn(cbatch, c);
    const double n = static_cast<double>(batch.size()) * static_cast<double>(batch.front().shape().voxels());

    auto mean = channel_sums(cbatch, c, [](double v, std::int64_t, std::size_t, std::int64_t, std::int64_t) { return v; });
    for (auto& m : mean) m /= n;
    auto var = channel_sums(cbatch, c, [&](double v, std::int64_t ch, std::size_t, std::int64_t, std::int64_t) {
        const double d = v - mean[static_cast<std::size_t>(ch)];
        return d * d;
    });
    BatchNormStats stats{mean, std::vector<double>(static_cast<std::size_t>(c))};
    for (std::size_t ch = 0; ch < static_cast<std::size_t>(c); ++ch) {
        var[ch] /= n;
        stats.inv_std[ch] = 1.0 / std::sqrt(var[ch] + static_cast<double>(params.epsilon));
        const double unbiased = n > 1 ? var[ch] * n / (n - 1) : var[ch];
        const double mom = static_cast<double>(params.momentum);
        params.running_mean[ch] = static_cast<T>((1 - mom) * params.running_mean[ch] + mom * mean[ch]);
        params.running_var[ch] = static_cast<T>((1 - mom) * params.running_var[ch] + mom * unbiased);
    }

    std::vector<T> a(static_cast<std::size_t>(c)), b(static_cast<std::size_t>(c));
    for (std::size_t ch = 0; ch < a.size(); ++ch) {
        a[ch] = static_cast<T>(params.scale[ch] * stats.inv_std[ch]);
        b[ch] = static_cast<T>(params.shift[ch] - params.scale[ch] * stats.inv_std[ch] * mean[ch]);
    }
    for (auto& t : batch) {
        T* p = t.data();
        const std::int64_t voxels = t.shape().voxels();
        parallel_for(0, voxels / 4096 + 1, [&](std::ptrdiff_t blk) {
            const std::int64_t v0 = blk * 4096, v1 = std::min<std::int64_t>(voxels, v0 + 4096);
            for (std::int64_t v = v0; v < v1; ++v)
                for (std::int64_t ch = 0; ch < c; ++ch) p[v * c + ch] = p[v * c + ch] * a[static_cast<std::size_t>(ch)] + b[static_cast<std::size_t>(ch)];
        });
    }
    return stats;
}

template <typename T>
void batch_norm_inference(Tensor4<T>& x, const BatchNormParams<T>& params) {
    const std::int64_t c = params.channels();
    if (x.shape().nc != c) throw InvalidArgument("batch_norm: channel count mismatch");
    std::vector<T> a(static_cast<std::size_t>(c)), b(static_cast<std::size_t>(c));
    for (std::size_t ch = 0; ch < a.size(); ++ch) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(params.running_var[ch]) + static_cast<double>(params.epsilon));
        a[ch] = static_cast<T>(params.scale[ch] * inv);
        b[ch] = static_cast<T>(params.shift[ch] - params.scale[ch] * inv * params.running_mean[ch]);
    }
    T* p = x.data();
    const std::int64_t voxels = x.shape().voxels();
    for (std::int64_t v = 0; v < voxels; ++v)
        for (std::int64_t ch = 0; ch < c; ++ch) p[v * c + ch] = p[v * c + ch] * a[static_cast<std::size_t>(ch)] + b[static_cast<std::size_t>(ch)];
}

template <typename T>
BatchNormGrads batch_norm_backward(std::span<const Tensor4<T>> pre_norm, std::span<Tensor4<T>> grad,
                                   const BatchNormParams<T>& params, const BatchNormStats& stats) {
    const std::int64_t c = params.channels();
    check_bn(pre_norm, c);
    if (grad.size() != pre_norm.size()) throw InvalidArgument("batch_norm_backward: batch size mismatch");
    const double n = static_cast<double>(pre_norm.size()) * static_cast<double>(pre_norm.front().shape().voxels());
    const auto cs = static_cast<std::size_t>(c);

    std::span<const Tensor4<T>> cgrad(grad.data(), grad.size());
    auto sum_dy = channel_sums(cgrad, c, [](double v, std::int64_t, std::size_t, std::int64_t, std::int64_t) { return v; });
    const auto& s = pre_norm.front().shape();
    auto sum_dy_xhat = channel_sums(cgrad, c, [&](double dy, std::int64_t ch, std::size_t b, std::int64_t z, std::int64_t v) {
        const double x = static_cast<double>(pre_norm[b].row(0, z)[v * c + ch]);
        return dy * (x - stats.mean[static_cast<std::size_t>(ch)]) * stats.inv_std[static_cast<std::size_t>(ch)];
    });

    BatchNormGrads g{sum_dy_xhat, sum_dy};
    std::vector<double> k(cs);
    for (std::size_t ch = 0; ch < cs; ++ch) k[ch] = static_cast<double>(params.scale[ch]) * stats.inv_std[ch] / n;

    for (std::size_t b = 0; b < grad.size(); ++b) {
        T* gp = grad[b].data();
        const T* xp = pre_norm[b].data();
        const std::int64_t voxels = s.voxels();
        parallel_for(0, voxels / 4096 + 1, [&](std::ptrdiff_t blk) {
            const std::int64_t v0 = blk * 4096, v1 = std::min<std::int64_t>(voxels, v0 + 4096);
            for (std::int64_t v = v0; v < v1; ++v) {
                for (std::size_t ch = 0; ch < cs; ++ch) {
                    const std::size_t i = static_cast<std::size_t>(v) * cs + ch;
                    const double xhat = (static_cast<double>(xp[i]) - stats.mean[ch]) * stats.inv_std[ch];
                    gp[i] = static_cast<T>(k[ch] * (n * static_cast<double>(gp[i]) - sum_dy[ch] - xhat * sum_dy_xhat[ch]));
                }
            }
        });
    }
    return g;
}

template <typename T>
void relu_inplace(Tensor4<T>& x) {
    for (T& v : x.values()) v = v > T(0) ? v : T(0);
}

template <typename T>
void sigmoid_inplace(Tensor4<T>& x) {
    for (T& v : x.values()) v = T(1) / (T(1) + std::exp(-v));
}

#define TPR_INSTANTIATE_LAYERS(T)                                                                              \
    template struct ConvKernel<T>;                                                                             \
    template struct BatchNormParams<T>;                                                                        \
    template Tensor4<T> conv3d(const ConvKernel<T>&, const Tensor4<T>&, int);                                  \
    template ConvKernel<T> flip_transpose(const ConvKernel<T>&);                                               \
    template Tensor4<T> conv3d_backward_input(const ConvKernel<T>&, const Tensor4<T>&);                        \
    template std::vector<double> conv3d_backward_kernel(const ConvKernel<T>&, std::span<const Tensor4<T>>,     \
                                                        std::span<const Tensor4<T>>);                          \
    template BatchNormStats batch_norm_train(std::span<Tensor4<T>>, BatchNormParams<T>&);                      \
    template void batch_norm_inference(Tensor4<T>&, const BatchNormParams<T>&);                                \
    template BatchNormGrads batch_norm_backward(std::span<const Tensor4<T>>, std::span<Tensor4<T>>,            \
                                                const BatchNormParams<T>&, const BatchNormStats&);             \
    template void relu_inplace(Tensor4<T>&);                                                                   \
    template void sigmoid_inplace(Tensor4<T>&);

TPR_INSTANTIATE_LAYERS(float)
TPR_INSTANTIATE_LAYERS(double)

}  // namespace tpr::nn
