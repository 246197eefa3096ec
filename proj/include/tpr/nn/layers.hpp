#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tpr/nn/tensor.hpp"

namespace tpr::nn {

/// L x M x N spatial taps (x, y, z), Q inputs, Q' outputs. Stored with the
/// output channel innermost: ((kz * M + ky) * L + kx) * Q * Q' + q * Q' + q'.
template <typename T>
struct ConvKernel {
    std::int64_t l = 3, m = 3, n = 3;
    std::int64_t q_in = 1, q_out = 1;
    std::vector<T> data;

    ConvKernel() = default;
    ConvKernel(std::int64_t l_, std::int64_t m_, std::int64_t n_, std::int64_t qi, std::int64_t qo);

    std::int64_t taps() const { return l * m * n; }
    std::size_t index(std::int64_t kx, std::int64_t ky, std::int64_t kz, std::int64_t q, std::int64_t qo) const {
        return static_cast<std::size_t>((((kz * m + ky) * l + kx) * q_in + q) * q_out + qo);
    }
    T& at(std::int64_t kx, std::int64_t ky, std::int64_t kz, std::int64_t q, std::int64_t qo) {
        return data[index(kx, ky, kz, q, qo)];
    }
    T at(std::int64_t kx, std::int64_t ky, std::int64_t kz, std::int64_t q, std::int64_t qo) const {
        return data[index(kx, ky, kz, q, qo)];
    }
    bool operator==(const ConvKernel&) const = default;
};

/// Zero-padded stride-1 convolution with centered odd kernels:
/// Z(i,j,k,q') = sum_q sum_{|a|,|b|,|c| <= half} V(i+a, j+b, k+c, q) K(a,b,c,q,q').
template <typename T>
Tensor4<T> conv3d(const ConvKernel<T>& kernel, const Tensor4<T>& input, int stride = 1);

/// Gradient of the loss w.r.t. the convolution input, given dL/dZ.
template <typename T>
Tensor4<T> conv3d_backward_input(const ConvKernel<T>& kernel, const Tensor4<T>& grad_output);

/// dL/dK accumulated over a batch, in double, in a fixed order.
template <typename T>
std::vector<double> conv3d_backward_kernel(const ConvKernel<T>& kernel, std::span<const Tensor4<T>> inputs,
                                           std::span<const Tensor4<T>> grad_outputs);

/// Kernel for the transposed convolution: taps mirrored, channels swapped.
template <typename T>
ConvKernel<T> flip_transpose(const ConvKernel<T>& kernel);

enum class Activation { relu, sigmoid };

template <typename T>
struct BatchNormParams {
    std::vector<T> scale;
    std::vector<T> shift;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T epsilon = T(1e-5);
    T momentum = T(0.1);

    explicit BatchNormParams(std::int64_t channels = 0);
    std::int64_t channels() const { return static_cast<std::int64_t>(scale.size()); }
    bool operator==(const BatchNormParams&) const = default;
};

/// Per-channel statistics of one training-mode batch-norm pass.
struct BatchNormStats {
    std::vector<double> mean;
    std::vector<double> inv_std;
};

/// Training mode: normalizes with batch statistics (population variance) and
/// updates the running statistics (unbiased variance) with params.momentum.
template <typename T>
BatchNormStats batch_norm_train(std::span<Tensor4<T>> batch, BatchNormParams<T>& params);

/// Inference mode with running statistics, in place.
template <typename T>
void batch_norm_inference(Tensor4<T>& x, const BatchNormParams<T>& params);

struct BatchNormGrads {
    std::vector<double> scale;
    std::vector<double> shift;
};

/// Given the pre-normalization inputs and dL/dy (overwritten with dL/dx).
template <typename T>
BatchNormGrads batch_norm_backward(std::span<const Tensor4<T>> pre_norm, std::span<Tensor4<T>> grad,
                                   const BatchNormParams<T>& params, const BatchNormStats& stats);

template <typename T>
void relu_inplace(Tensor4<T>& x);
template <typename T>
void sigmoid_inplace(Tensor4<T>& x);

template <typename T>
Tensor4<T> relu(Tensor4<T> x) {
    relu_inplace(x);
    return x;
}
template <typename T>
Tensor4<T> sigmoid(Tensor4<T> x) {
    sigmoid_inplace(x);
    return x;
}

}  // namespace tpr::nn
