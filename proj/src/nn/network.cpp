#include "tpr/nn/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <string>

#include "tpr/error.hpp"
#include "tpr/io.hpp"
#include "tpr/parallel.hpp"

namespace tpr::nn {

template <typename T>
std::vector<std::span<T>> NetworkT<T>::parameters() {
    std::vector<std::span<T>> out;
    for (auto& layer : layers) {
        out.emplace_back(layer.kernel.data);
        if (layer.bias) out.emplace_back(*layer.bias);
        if (layer.batch_norm) {
            out.emplace_back(layer.batch_norm->scale);
            out.emplace_back(layer.batch_norm->shift);
        }
    }
    return out;
}

template <typename T>
std::vector<std::span<const T>> NetworkT<T>::parameters() const {
    std::vector<std::span<const T>> out;
    for (const auto& layer : layers) {
        out.emplace_back(layer.kernel.data);
        if (layer.bias) out.emplace_back(*layer.bias);
        if (layer.batch_norm) {
            out.emplace_back(layer.batch_norm->scale);
            out.emplace_back(layer.batch_norm->shift);
        }
    }
    return out;
}

template <typename T>
std::size_t NetworkT<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.size();
    return n;
}

template <typename T>
NetworkT<T> make_network(std::int64_t in_channels, const std::vector<std::int64_t>& hidden, std::uint64_t seed,
                         std::int64_t ks) {
    if (hidden.empty()) throw InvalidArgument("network needs at least one hidden layer");
    std::mt19937_64 rng(seed);
    NetworkT<T> net;
    auto init = [&](ConvKernel<T>& k, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        for (T& w : k.data) w = static_cast<T>(dist(rng));
    };
    std::int64_t prev = in_channels;
    for (std::size_t i = 0; i <= hidden.size(); ++i) {
        const bool last = i == hidden.size();
        const std::int64_t out = last ? 1 : hidden[i];
        LayerSpec<T> layer;
        layer.kernel = ConvKernel<T>(ks, ks, ks, prev, out);
        const double fan_in = static_cast<double>(ks * ks * ks * prev);
        init(layer.kernel, last ? 0.01 : std::sqrt(2.0 / fan_in));
        if (last) {
            layer.activation = Activation::sigmoid;
            layer.bias = std::vector<T>(static_cast<std::size_t>(out), T(0));
        } else {
            layer.activation = Activation::relu;
            if (i > 0) layer.batch_norm = BatchNormParams<T>(out);
        }
        net.layers.push_back(std::move(layer));
        prev = out;
    }
    return net;
}

template <typename T>
NetworkT<T> make_ai_pr_network(std::uint64_t seed) {
    return make_network<T>(1, std::vector<std::int64_t>(kAiPrLayers - 1, kAiPrChannels), seed);
}

template <typename T>
void validate_ai_pr(const NetworkT<T>& net) {
    if (net.layers.size() != static_cast<std::size_t>(kAiPrLayers))
        throw InvalidArgument("network must have exactly 12 layers, found " + std::to_string(net.layers.size()));
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& l = net.layers[i];
        const bool first = i == 0, last = i + 1 == net.layers.size();
        const std::int64_t qi = first ? 1 : kAiPrChannels, qo = last ? 1 : kAiPrChannels;
        const std::string where = "layer " + std::to_string(i + 1) + ": ";
        if (l.kernel.l != 3 || l.kernel.m != 3 || l.kernel.n != 3) throw InvalidArgument(where + "kernel must be 3x3x3");
        if (l.kernel.q_in != qi || l.kernel.q_out != qo) throw InvalidArgument(where + "unexpected channel counts");
        if (l.activation != (last ? Activation::sigmoid : Activation::relu))
            throw InvalidArgument(where + "unexpected activation");
        if (l.batch_norm.has_value() != (!first && !last)) throw InvalidArgument(where + "unexpected batch norm");
        if (l.bias.has_value() != last) throw InvalidArgument(where + "unexpected bias");
    }
}

template <typename U, typename T>
NetworkT<U> cast_network(const NetworkT<T>& net) {
    auto cast_vec = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    NetworkT<U> out;
    for (const auto& l : net.layers) {
        LayerSpec<U> m;
        m.kernel.l = l.kernel.l;
        m.kernel.m = l.kernel.m;
        m.kernel.n = l.kernel.n;
        m.kernel.q_in = l.kernel.q_in;
        m.kernel.q_out = l.kernel.q_out;
        m.kernel.data = cast_vec(l.kernel.data);
        m.activation = l.activation;
        if (l.bias) m.bias = cast_vec(*l.bias);
        if (l.batch_norm) {
            BatchNormParams<U> bn;
            bn.scale = cast_vec(l.batch_norm->scale);
            bn.shift = cast_vec(l.batch_norm->shift);
            bn.running_mean = cast_vec(l.batch_norm->running_mean);
            bn.running_var = cast_vec(l.batch_norm->running_var);
            bn.epsilon = static_cast<U>(l.batch_norm->epsilon);
            bn.momentum = static_cast<U>(l.batch_norm->momentum);
            m.batch_norm = std::move(bn);
        }
        out.layers.push_back(std::move(m));
    }
    return out;
}

namespace {

template <typename T>
void add_bias(Tensor4<T>& z, const std::vector<T>& bias) {
    const auto c = static_cast<std::size_t>(z.shape().nc);
    if (bias.size() != c) throw InvalidArgument("bias size does not match output channels");
    T* p = z.data();
    const auto voxels = static_cast<std::size_t>(z.shape().voxels());
    for (std::size_t v = 0; v < voxels; ++v)
        for (std::size_t ch = 0; ch < c; ++ch) p[v * c + ch] += bias[ch];
}

template <typename T>
void activate(Tensor4<T>& z, Activation a) {
    if (a == Activation::relu)
        relu_inplace(z);
    else
        sigmoid_inplace(z);
}

}  // namespace

template <typename T>
Tensor4<T> forward_any(const NetworkT<T>& net, const Tensor4<T>& input) {
    if (net.layers.empty()) throw InvalidArgument("network has no layers");
    const Tensor4<T>* x = &input;
    Tensor4<T> cur;
    for (const auto& layer : net.layers) {
        Tensor4<T> z = conv3d(layer.kernel, *x);
        if (layer.bias) add_bias(z, *layer.bias);
        if (layer.batch_norm) batch_norm_inference(z, *layer.batch_norm);
        activate(z, layer.activation);
        cur = std::move(z);
        x = &cur;
    }
    return cur;
}

template <typename T>
Tensor4<T> forward(const NetworkT<T>& net, const Tensor4<T>& input) {
    if (!(input.shape() == kBlockShape))
        throw InvalidArgument("forward: input must be 64x64x32x1, got " + std::to_string(input.shape().nx) + "x" +
                              std::to_string(input.shape().ny) + "x" + std::to_string(input.shape().nz) + "x" +
                              std::to_string(input.shape().nc));
    for (T v : input.values())
        if (!std::isfinite(static_cast<double>(v))) throw InvalidArgument("forward: input contains non-finite values");
    return forward_any(net, input);
}

namespace {

struct LossSums {
    double overlap = 0.0;     // sum F * P
    double abs_error = 0.0;   // sum |F - P|
};

template <typename T>
LossSums loss_sums(std::span<const Tensor4<T>> targets, std::span<const Tensor4<T>> outputs) {
    if (targets.size() != outputs.size()) throw InvalidArgument("loss: batch size mismatch");
    LossSums s;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (!(targets[i].shape() == outputs[i].shape())) throw InvalidArgument("loss: tensor shape mismatch");
        const auto f = targets[i].values();
        const auto p = outputs[i].values();
        double o = 0.0, a = 0.0;
        for (std::size_t k = 0; k < f.size(); ++k) {
            const double fv = static_cast<double>(f[k]), pv = static_cast<double>(p[k]);
            o += fv * pv;
            a += std::abs(fv - pv);
        }
        s.overlap += o;
        s.abs_error += a;
    }
    return s;
}

}  // namespace

template <typename T>
double loss(std::span<const Tensor4<T>> targets, std::span<const Tensor4<T>> outputs, double eps) {
    if (!(eps > 0.0)) throw InvalidArgument("loss epsilon must be positive");
    const auto s = loss_sums(targets, outputs);
    return s.overlap / (s.abs_error + eps);
}

namespace {

template <typename T>
struct ForwardCache {
    std::vector<std::vector<Tensor4<T>>> activations;  // [l] = input of layer l; [L] = output
    std::vector<std::vector<Tensor4<T>>> pre_norm;     // conv output before BN (BN layers only)
    std::vector<BatchNormStats> stats;
};

template <typename T>
ForwardCache<T> run_forward_train(NetworkT<T>& net, std::span<const Tensor4<T>> inputs) {
    if (inputs.empty()) throw InvalidArgument("empty batch");
    const std::size_t nl = net.layers.size();
    ForwardCache<T> cache;
    cache.activations.resize(nl + 1);
    cache.pre_norm.resize(nl);
    cache.stats.resize(nl);
    cache.activations[0].assign(inputs.begin(), inputs.end());
    for (std::size_t l = 0; l < nl; ++l) {
        auto& layer = net.layers[l];
        std::vector<Tensor4<T>> z;
        z.reserve(inputs.size());
        for (const auto& a : cache.activations[l]) {
            z.push_back(conv3d(layer.kernel, a));
            if (layer.bias) add_bias(z.back(), *layer.bias);
        }
        if (layer.batch_norm) {
            cache.pre_norm[l] = z;
            cache.stats[l] = batch_norm_train(std::span<Tensor4<T>>(z), *layer.batch_norm);
        }
        for (auto& t : z) activate(t, layer.activation);
        cache.activations[l + 1] = std::move(z);
    }
    return cache;
}

}  // namespace

template <typename T>
std::vector<Tensor4<T>> forward_train(NetworkT<T>& net, std::span<const Tensor4<T>> inputs) {
    auto cache = run_forward_train(net, inputs);
    return std::move(cache.activations.back());
}

template <typename T>
GradientResult<T> gradients(NetworkT<T>& net, std::span<const Tensor4<T>> inputs,
                            std::span<const Tensor4<T>> targets, double eps) {
    if (inputs.size() != targets.size()) throw InvalidArgument("gradients: inputs and targets differ in count");
    if (!(eps > 0.0)) throw InvalidArgument("loss epsilon must be positive");
    auto cache = run_forward_train(net, inputs);
    const std::size_t nl = net.layers.size();
    const std::size_t nb = inputs.size();

    GradientResult<T> result;
    result.outputs = cache.activations[nl];
    const auto sums = loss_sums(targets, std::span<const Tensor4<T>>(result.outputs));
    const double denom = sums.abs_error + eps;
    result.loss = sums.overlap / denom;

    // d(-loss)/dP = -(F / denom - overlap * sign(P - F) / denom^2)
    std::vector<Tensor4<T>> grad(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        grad[b] = Tensor4<T>(result.outputs[b].shape());
        const auto f = targets[b].values();
        const auto p = result.outputs[b].values();
        auto g = grad[b].values();
        for (std::size_t k = 0; k < g.size(); ++k) {
            const double fv = static_cast<double>(f[k]), pv = static_cast<double>(p[k]);
            const double sign = pv > fv ? 1.0 : (pv < fv ? -1.0 : 0.0);
            g[k] = static_cast<T>(-(fv / denom - sums.overlap * sign / (denom * denom)));
        }
    }

    std::vector<std::vector<std::vector<double>>> per_layer(nl);
    for (std::size_t li = nl; li-- > 0;) {
        auto& layer = net.layers[li];
        const auto& out = cache.activations[li + 1];
        for (std::size_t b = 0; b < nb; ++b) {
            auto g = grad[b].values();
            const auto a = out[b].values();
            if (layer.activation == Activation::relu) {
                for (std::size_t k = 0; k < g.size(); ++k)
                    if (!(a[k] > T(0))) g[k] = T(0);
            } else {
                for (std::size_t k = 0; k < g.size(); ++k) g[k] *= a[k] * (T(1) - a[k]);
            }
        }
        cache.activations[li + 1].clear();

        std::optional<BatchNormGrads> bn_grads;
        if (layer.batch_norm) {
            bn_grads = batch_norm_backward(std::span<const Tensor4<T>>(cache.pre_norm[li]), std::span<Tensor4<T>>(grad),
                                           *layer.batch_norm, cache.stats[li]);
            cache.pre_norm[li].clear();
        }
        std::optional<std::vector<double>> bias_grad;
        if (layer.bias) {
            const auto c = static_cast<std::size_t>(layer.kernel.q_out);
            bias_grad = std::vector<double>(c, 0.0);
            for (const auto& g : grad) {
                const auto gv = g.values();
                for (std::size_t k = 0; k < gv.size(); ++k) (*bias_grad)[k % c] += static_cast<double>(gv[k]);
            }
        }
        auto kernel_grad = conv3d_backward_kernel(layer.kernel, std::span<const Tensor4<T>>(cache.activations[li]),
                                                  std::span<const Tensor4<T>>(grad));
        if (li > 0) {
            for (auto& g : grad) g = conv3d_backward_input(layer.kernel, g);
        }
        auto& slot = per_layer[li];
        slot.push_back(std::move(kernel_grad));
        if (bias_grad) slot.push_back(std::move(*bias_grad));
        if (bn_grads) {
            slot.push_back(std::move(bn_grads->scale));
            slot.push_back(std::move(bn_grads->shift));
        }
    }
    for (auto& slot : per_layer)
        for (auto& g : slot) result.grads.push_back(std::move(g));
    return result;
}

namespace {

constexpr char kNetMagic[4] = {'T', 'P', 'R', 'N'};
constexpr std::uint32_t kNetVersion = 1;

}  // namespace

void save_network(const std::filesystem::path& path, const Network& net) {
    io::atomic_write(path, [&](std::ostream& os) {
        auto u32 = [&](std::uint64_t v) {
            const auto x = static_cast<std::uint32_t>(v);
            os.write(reinterpret_cast<const char*>(&x), 4);
        };
        auto f64s = [&](const std::vector<double>& v) {
            os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
        };
        auto f64 = [&](double v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
        os.write(kNetMagic, 4);
        u32(kNetVersion);
        u32(net.layers.size());
        for (const auto& l : net.layers) {
            u32(static_cast<std::uint64_t>(l.kernel.l));
            u32(static_cast<std::uint64_t>(l.kernel.m));
            u32(static_cast<std::uint64_t>(l.kernel.n));
            u32(static_cast<std::uint64_t>(l.kernel.q_in));
            u32(static_cast<std::uint64_t>(l.kernel.q_out));
            u32(l.activation == Activation::relu ? 0 : 1);
            u32(l.batch_norm ? 1 : 0);
            u32(l.bias ? 1 : 0);
        }
        for (const auto& l : net.layers) {
            f64s(l.kernel.data);
            if (l.bias) f64s(*l.bias);
            if (l.batch_norm) {
                f64s(l.batch_norm->scale);
                f64s(l.batch_norm->shift);
                f64s(l.batch_norm->running_mean);
                f64s(l.batch_norm->running_var);
                f64(l.batch_norm->epsilon);
                f64(l.batch_norm->momentum);
            }
        }
    });
}

Network load_network(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open network file " + path.string());
    auto fail = [&](const std::string& what) { return RuntimeError("bad network file " + path.string() + ": " + what); };
    auto u32 = [&]() {
        std::uint32_t v = 0;
        if (!in.read(reinterpret_cast<char*>(&v), 4)) throw fail("truncated header");
        return v;
    };
    auto f64s = [&](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double))))
            throw fail("truncated parameters");
    };
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kNetMagic, 4) != 0) throw fail("missing TPRN magic");
    if (u32() != kNetVersion) throw fail("unsupported version");
    const std::uint32_t count = u32();
    if (count == 0 || count > 1024) throw fail("implausible layer count");
    Network net;
    for (std::uint32_t i = 0; i < count; ++i) {
        LayerSpec<double> l;
        const auto kl = u32(), km = u32(), kn = u32(), qi = u32(), qo = u32();
        const auto act = u32(), bn = u32(), bias = u32();
        if (kl * km * kn * qi * qo == 0 || kl > 31 || km > 31 || kn > 31 || qi > 4096 || qo > 4096)
            throw fail("implausible layer dimensions");
        try {
            l.kernel = ConvKernel<double>(kl, km, kn, qi, qo);
        } catch (const InvalidArgument& e) {
            throw fail(e.what());
        }
        if (act > 1 || bn > 1 || bias > 1) throw fail("bad layer flags");
        l.activation = act == 0 ? Activation::relu : Activation::sigmoid;
        if (bn) l.batch_norm = BatchNormParams<double>(qo);
        if (bias) l.bias = std::vector<double>(qo);
        net.layers.push_back(std::move(l));
    }
    for (auto& l : net.layers) {
        f64s(l.kernel.data, l.kernel.data.size());
        if (l.bias) f64s(*l.bias, l.bias->size());
        if (l.batch_norm) {
            const auto c = static_cast<std::size_t>(l.batch_norm->channels());
            f64s(l.batch_norm->scale, c);
            f64s(l.batch_norm->shift, c);
            f64s(l.batch_norm->running_mean, c);
            f64s(l.batch_norm->running_var, c);
            std::vector<double> tail;
            f64s(tail, 2);
            l.batch_norm->epsilon = tail[0];
            l.batch_norm->momentum = tail[1];
            for (double v : l.batch_norm->running_var)
                if (!(v > 0.0)) throw fail("batch-norm variance must be positive");
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw fail("trailing bytes");
    return net;
}

#define TPR_INSTANTIATE_NETWORK(T)                                                                                \
    template struct NetworkT<T>;                                                                                  \
    template NetworkT<T> make_network(std::int64_t, const std::vector<std::int64_t>&, std::uint64_t, std::int64_t); \
    template NetworkT<T> make_ai_pr_network(std::uint64_t);                                                       \
    template void validate_ai_pr(const NetworkT<T>&);                                                             \
    template Tensor4<T> forward_any(const NetworkT<T>&, const Tensor4<T>&);                                       \
    template Tensor4<T> forward(const NetworkT<T>&, const Tensor4<T>&);                                           \
    template double loss(std::span<const Tensor4<T>>, std::span<const Tensor4<T>>, double);                      \
    template GradientResult<T> gradients(NetworkT<T>&, std::span<const Tensor4<T>>, std::span<const Tensor4<T>>,  \
                                         double);                                                                 \
    template std::vector<Tensor4<T>> forward_train(NetworkT<T>&, std::span<const Tensor4<T>>);

TPR_INSTANTIATE_NETWORK(float)
TPR_INSTANTIATE_NETWORK(double)

template NetworkT<float> cast_network(const NetworkT<double>&);
template NetworkT<double> cast_network(const NetworkT<float>&);
template NetworkT<double> cast_network(const NetworkT<double>&);
template NetworkT<float> cast_network(const NetworkT<float>&);

}  // namespace tpr::nn
