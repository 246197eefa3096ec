#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "tpr/nn/layers.hpp"
#include "tpr/nn/tensor.hpp"

namespace tpr::nn {

template <typename T>
struct LayerSpec {
    ConvKernel<T> kernel;
    Activation activation = Activation::relu;
    std::optional<BatchNormParams<T>> batch_norm;
    std::optional<std::vector<T>> bias;

    bool operator==(const LayerSpec&) const = default;
};

template <typename T>
struct NetworkT {
    std::vector<LayerSpec<T>> layers;

    /// Trainable tensors in declaration order: per layer the kernel, then the
    /// bias, then batch-norm scale and shift.
    std::vector<std::span<T>> parameters();
    std::vector<std::span<const T>> parameters() const;
    std::size_t parameter_count() const;

    bool operator==(const NetworkT&) const = default;
};

using Network = NetworkT<double>;

/// Fixed block size of the reconstruction network.
inline constexpr Shape4 kBlockShape{64, 64, 32, 1};
inline constexpr int kAiPrLayers = 12;
inline constexpr int kAiPrChannels = 16;

/// Generic conv stack with the reconstruction network's layer pattern:
/// first layer conv -> ReLU, middle layers conv -> BN -> ReLU, last layer
/// conv + bias -> sigmoid. `channels` lists the hidden widths.
/// He-normal init (std sqrt(2 / fan_in)); last layer std 0.01, bias 0.
template <typename T>
NetworkT<T> make_network(std::int64_t in_channels, const std::vector<std::int64_t>& hidden, std::uint64_t seed,
                         std::int64_t kernel_size = 3);

/// 12 layers: 1 -> 16 (ReLU), 10 x 16 -> 16 (BN, ReLU), 16 -> 1 (+bias, sigmoid).
template <typename T>
NetworkT<T> make_ai_pr_network(std::uint64_t seed);

/// Throws InvalidArgument unless `net` has the 12-layer reconstruction architecture.
template <typename T>
void validate_ai_pr(const NetworkT<T>& net);

template <typename U, typename T>
NetworkT<U> cast_network(const NetworkT<T>& net);

/// Inference-mode pass over any spatial size.
template <typename T>
Tensor4<T> forward_any(const NetworkT<T>& net, const Tensor4<T>& input);

/// Inference-mode pass over one 64 x 64 x 32 x 1 block.
template <typename T>
Tensor4<T> forward(const NetworkT<T>& net, const Tensor4<T>& input);

/// sum_i sum(F_i * P_i) / (sum_i sum(|F_i - P_i|) + eps). Training maximizes it.
template <typename T>
double loss(std::span<const Tensor4<T>> targets, std::span<const Tensor4<T>> outputs, double eps = 1e-3);

template <typename T>
struct GradientResult {
    double loss = 0.0;                          // objective value, before negation
    std::vector<std::vector<double>> grads;     // d(-loss)/dparam, aligned with parameters()
    std::vector<Tensor4<T>> outputs;
};

/// Training-mode forward (batch statistics, running stats updated) and exact
/// reverse-mode gradients of the negated objective.
template <typename T>
GradientResult<T> gradients(NetworkT<T>& net, std::span<const Tensor4<T>> inputs,
                            std::span<const Tensor4<T>> targets, double eps = 1e-3);

/// Training-mode forward only (running stats updated); used by gradient checks.
template <typename T>
std::vector<Tensor4<T>> forward_train(NetworkT<T>& net, std::span<const Tensor4<T>> inputs);

/// Binary "TPRN": magic, u32 version, u32 layer count, per layer u32
/// {L, M, N, Q, Q', activation, has_bn, has_bias}; then per layer the kernel,
/// bias, and {scale, shift, running_mean, running_var, epsilon, momentum} as
/// little-endian float64.
void save_network(const std::filesystem::path& path, const Network& net);
Network load_network(const std::filesystem::path& path);

}  // namespace tpr::nn
