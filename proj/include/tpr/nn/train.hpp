#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "tpr/nn/network.hpp"
#include "tpr/synthesis.hpp"

namespace tpr::nn {

struct TrainConfig {
    int epochs = 100;
    int batch_size = 4;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double loss_epsilon = 1e-3;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;  // mean objective over minibatches
    double val_loss = 0.0;    // objective over the whole validation set
    double val_q = 0.0;       // mean quality factor over validation samples
    double wall_seconds = 0.0;
};

template <typename T>
struct TrainResult {
    NetworkT<T> network;  // parameters of the best validation-Q epoch
    std::vector<EpochLog> log;
    int best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Network input normalization shared by training and tiled inference.
template <typename T>
Tensor4<T> normalized_input(const VoxelVolume& mlos_field);

/// Adam on the negated objective with seeded shuffled minibatches. The
/// validation split is drawn once from the seed. Starts from `initial` when
/// given, otherwise from make_ai_pr_network(seed).
template <typename T>
TrainResult<T> train(const std::vector<TrainingSample>& dataset, const TrainConfig& config,
                     std::optional<NetworkT<T>> initial = std::nullopt, const EpochCallback& on_epoch = {});

/// CSV: epoch,train_loss,val_loss,val_Q,wall_seconds
void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

}  // namespace tpr::nn
