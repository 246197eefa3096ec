#include "tpr/nn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "tpr/error.hpp"
#include "tpr/evaluation.hpp"
#include "tpr/io.hpp"

namespace tpr::nn {

void TrainConfig::validate() const {
    if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
    if (!(learning_rate >= 0.0)) throw InvalidArgument("learning rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
        throw InvalidArgument("moment coefficients must be in [0, 1)");
    if (!(loss_epsilon > 0.0)) throw InvalidArgument("loss epsilon must be positive");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw InvalidArgument("validation fraction must be in (0, 1)");
}

template <typename T>
Tensor4<T> normalized_input(const VoxelVolume& field) {
    const double peak = field.max();
    return to_tensor<T>(field, peak > 0.0 ? 1.0 / peak : 0.0);
}

template <typename T>
TrainResult<T> train(const std::vector<TrainingSample>& dataset, const TrainConfig& config,
                     std::optional<NetworkT<T>> initial, const EpochCallback& on_epoch) {
    config.validate();
    if (dataset.size() < 2) throw InvalidArgument("training needs at least 2 samples");
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();

    std::vector<Tensor4<T>> inputs, targets;
    inputs.reserve(dataset.size());
    targets.reserve(dataset.size());
    for (const auto& s : dataset) {
        inputs.push_back(normalized_input<T>(s.input));
        targets.push_back(to_tensor<T>(s.target));
        if (!(inputs.back().shape() == inputs.front().shape()) || !(targets.back().shape() == inputs.front().shape()))
            throw InvalidArgument("all training samples must share one shape");
    }

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 split_rng(config.seed ^ 0x5eedf00dULL);
    std::shuffle(order.begin(), order.end(), split_rng);
    const auto n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(dataset.size()))), 1,
        dataset.size() - 1);
    const std::vector<std::size_t> val_idx(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
    std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));

    NetworkT<T> net = initial ? std::move(*initial) : make_ai_pr_network<T>(config.seed);
    auto params = net.parameters();
    std::vector<std::vector<double>> m1(params.size()), m2(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        m1[i].assign(params[i].size(), 0.0);
        m2[i].assign(params[i].size(), 0.0);
    }

    TrainResult<T> result;
    double best_q = -std::numeric_limits<double>::infinity();
    long step = 0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::mt19937_64 rng(config.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch));
        std::shuffle(train_idx.begin(), train_idx.end(), rng);

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t b0 = 0; b0 < train_idx.size(); b0 += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t b1 = std::min(train_idx.size(), b0 + static_cast<std::size_t>(config.batch_size));
            std::vector<Tensor4<T>> bx, by;
            for (std::size_t i = b0; i < b1; ++i) {
                bx.push_back(inputs[train_idx[i]]);
                by.push_back(targets[train_idx[i]]);
            }
            auto g = gradients(net, std::span<const Tensor4<T>>(bx), std::span<const Tensor4<T>>(by),
                               config.loss_epsilon);
            if (!std::isfinite(g.loss))
                throw RuntimeError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches + 1));
            loss_sum += g.loss;
            ++batches;

            ++step;
            const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
            params = net.parameters();
            for (std::size_t p = 0; p < params.size(); ++p) {
                for (std::size_t k = 0; k < params[p].size(); ++k) {
                    const double gk = g.grads[p][k];
                    if (!std::isfinite(gk))
                        throw RuntimeError("training diverged: non-finite gradient at epoch " + std::to_string(epoch));
                    m1[p][k] = config.beta1 * m1[p][k] + (1.0 - config.beta1) * gk;
                    m2[p][k] = config.beta2 * m2[p][k] + (1.0 - config.beta2) * gk * gk;
                    const double update =
                        config.learning_rate * (m1[p][k] / c1) / (std::sqrt(m2[p][k] / c2) + config.adam_epsilon);
                    params[p][k] = static_cast<T>(static_cast<double>(params[p][k]) - update);
                }
            }
        }

        std::vector<Tensor4<T>> vout, vtar;
        double q_sum = 0.0;
        for (std::size_t i : val_idx) {
            vout.push_back(forward_any(net, inputs[i]));
            vtar.push_back(targets[i]);
            q_sum += noncentered_correlation(vout.back().values(), vtar.back().values());
        }
        EpochLog row;
        row.epoch = epoch;
        row.train_loss = loss_sum / batches;
        row.val_loss = loss(std::span<const Tensor4<T>>(vtar), std::span<const Tensor4<T>>(vout), config.loss_epsilon);
        row.val_q = q_sum / static_cast<double>(val_idx.size());
        row.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        if (!std::isfinite(row.val_loss) || !std::isfinite(row.val_q))
            throw RuntimeError("training diverged: non-finite validation metrics at epoch " + std::to_string(epoch));
        result.log.push_back(row);
        if (row.val_q > best_q) {
            best_q = row.val_q;
            result.network = net;
            result.best_epoch = epoch;
        }
        if (on_epoch) on_epoch(row);
    }
    return result;
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os << "epoch,train_loss,val_loss,val_Q,wall_seconds\n";
    for (const auto& r : log)
        os << r.epoch << ',' << io::format_double(r.train_loss) << ',' << io::format_double(r.val_loss) << ','
           << io::format_double(r.val_q) << ',' << io::format_double(r.wall_seconds) << '\n';
    const std::string text = os.str();
    io::atomic_write(path, [&](std::ostream& out) { out << text; });
}

template Tensor4<float> normalized_input(const VoxelVolume&);
template Tensor4<double> normalized_input(const VoxelVolume&);
template TrainResult<float> train(const std::vector<TrainingSample>&, const TrainConfig&, std::optional<NetworkT<float>>,
                                  const EpochCallback&);
template TrainResult<double> train(const std::vector<TrainingSample>&, const TrainConfig&,
                                   std::optional<NetworkT<double>>, const EpochCallback&);

}  // namespace tpr::nn
