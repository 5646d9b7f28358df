#include "nclamp/network.hpp"

#include <cmath>
#include <random>
#include <string>

#include "nclamp/errors.hpp"
#include "nclamp/kernels.hpp"
#include "nclamp/metrics.hpp"

namespace nclamp {

namespace kern = kernels::parallel;

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string layer_tag(std::size_t index) { return "layer " + std::to_string(index) + ": "; }

// Input of every layer plus the final output; acts[l] feeds layers[l].
std::vector<Tensor> forward_trace(const Network& net, const Tensor& x) {
    std::vector<Tensor> acts;
    acts.reserve(net.layers().size() + 1);
    acts.push_back(x);
    for (const auto& layer : net.layers()) {
        const Tensor& in = acts.back();
        acts.push_back(std::visit(Overloaded{
                                      [&](const DenseLayer& d) {
                                          return kern::dense_forward(in, d.weight, d.bias, d.out_dim);
                                      },
                                      [&](const ReluLayer&) { return kern::relu_forward(in); },
                                  },
                                  layer));
    }
    return acts;
}

void check_input(const Network& net, const Tensor& x) {
    if (x.cols() != net.input_dim()) {
        throw DimensionError("input has " + std::to_string(x.cols()) + " columns, network expects " +
                             std::to_string(net.input_dim()));
    }
}

void check_upstream(const Network& net, const Tensor& x, const Tensor& dz) {
    check_input(net, x);
    if (dz.rows() != x.rows() || dz.cols() != net.class_count()) {
        throw DimensionError("upstream gradient shape " + std::to_string(dz.rows()) + "x" +
                             std::to_string(dz.cols()) + " does not match logits " + std::to_string(x.rows()) +
                             "x" + std::to_string(net.class_count()));
    }
}

}  // namespace

Network::Network(std::size_t input_dim, std::vector<LayerSpec> layers)
    : input_dim_(input_dim), class_count_(0), layers_(std::move(layers)) {
    if (input_dim_ == 0) throw SchemaError("network: input_dim must be positive");
    std::size_t width = input_dim_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (const auto* d = std::get_if<DenseLayer>(&layers_[i])) {
            if (d->in_dim != width) {
                throw SchemaError(layer_tag(i) + "in=" + std::to_string(d->in_dim) + " but previous width is " +
                                  std::to_string(width));
            }
            if (d->out_dim == 0) throw SchemaError(layer_tag(i) + "out must be positive");
            if (d->weight.size() != d->in_dim * d->out_dim) {
                throw SchemaError(layer_tag(i) + "weight has " + std::to_string(d->weight.size()) +
                                  " entries, expected " + std::to_string(d->in_dim * d->out_dim));
            }
            if (d->bias.size() != d->out_dim) {
                throw SchemaError(layer_tag(i) + "bias has " + std::to_string(d->bias.size()) +
                                  " entries, expected " + std::to_string(d->out_dim));
            }
            for (double w : d->weight) {
                if (!std::isfinite(w)) throw SchemaError(layer_tag(i) + "non-finite weight");
            }
            for (double b : d->bias) {
                if (!std::isfinite(b)) throw SchemaError(layer_tag(i) + "non-finite bias");
            }
            width = d->out_dim;
        }
    }
    if (width < 2) throw SchemaError("network: final width " + std::to_string(width) + " < 2 classes");
    class_count_ = width;
}

Batch::Batch(Tensor f, std::vector<Label> l) : features(std::move(f)), labels(std::move(l)) {
    if (labels.empty()) throw DimensionError("batch: no samples");
    if (features.rows() != labels.size()) {
        throw DimensionError("batch: " + std::to_string(features.rows()) + " feature rows but " +
                             std::to_string(labels.size()) + " labels");
    }
}

Tensor forward(const Network& net, const Tensor& x) {
    check_input(net, x);
    return std::move(forward_trace(net, x).back());
}

Tensor backward_input(const Network& net, const Tensor& x, const Tensor& dz) {
    check_upstream(net, x, dz);
    const auto acts = forward_trace(net, x);
    Tensor grad = dz;
    for (std::size_t l = net.layers().size(); l-- > 0;) {
        grad = std::visit(Overloaded{
                              [&](const DenseLayer& d) { return kern::dense_backward_input(grad, d.weight, d.in_dim); },
                              [&](const ReluLayer&) { return kern::relu_backward(acts[l], grad); },
                          },
                          net.layers()[l]);
    }
    return grad;
}

std::vector<LayerGrad> backward_params(const Network& net, const Tensor& x, const Tensor& dz) {
    check_upstream(net, x, dz);
    const auto acts = forward_trace(net, x);
    std::vector<LayerGrad> grads(net.layers().size());
    Tensor grad = dz;
    for (std::size_t l = net.layers().size(); l-- > 0;) {
        if (const auto* d = std::get_if<DenseLayer>(&net.layers()[l])) {
            grads[l].d_weight.assign(d->weight.size(), 0.0);
            grads[l].d_bias.assign(d->bias.size(), 0.0);
            kern::dense_backward_params(acts[l], grad, grads[l].d_weight, grads[l].d_bias);
            if (l > 0) grad = kern::dense_backward_input(grad, d->weight, d->in_dim);
        } else {
            grad = kern::relu_backward(acts[l], grad);
        }
    }
    return grads;
}

Tensor entropy_input_grad(const Network& net, const Tensor& x, double temperature) {
    if (!(temperature > 0.0)) throw DomainError("entropy_input_grad: temperature must be positive");
    const Tensor z = forward(net, x);
    const std::size_t k_count = z.cols();
    // With p = softmax(z/T): dH/dz_k = -p_k (ln p_k + H) / T.
    Tensor dz(z.rows(), k_count);
    std::vector<double> p(k_count);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        softmax_T(z.row(i), temperature, p);
        const double h = entropy(p);
        for (std::size_t k = 0; k < k_count; ++k) {
            dz(i, k) = p[k] > 0.0 ? -p[k] * (std::log(p[k]) + h) / temperature : 0.0;
        }
    }
    return backward_input(net, x, dz);
}

std::vector<LayerSpec> mlp_architecture(std::size_t input_dim, std::span<const std::size_t> hidden,
                                        std::size_t class_count) {
    std::vector<LayerSpec> layers;
    std::size_t width = input_dim;
    auto dense = [](std::size_t in, std::size_t out) {
        return DenseLayer{in, out, std::vector<double>(in * out, 0.0), std::vector<double>(out, 0.0)};
    };
    for (std::size_t h : hidden) {
        layers.emplace_back(dense(width, h));
        layers.emplace_back(ReluLayer{});
        width = h;
    }
    layers.emplace_back(dense(width, class_count));
    return layers;
}

Network init_network(std::size_t input_dim, std::vector<LayerSpec> arch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& layer : arch) {
        if (auto* d = std::get_if<DenseLayer>(&layer)) {
            if (d->in_dim == 0) throw SchemaError("dense layer with in=0");
            std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(d->in_dim)));
            d->weight.resize(d->in_dim * d->out_dim);
            d->bias.assign(d->out_dim, 0.0);
            for (auto& w : d->weight) w = dist(rng);
        }
    }
    return Network(input_dim, std::move(arch));
}

Network train_base_classifier(const Batch& data, std::vector<LayerSpec> arch, int epochs, double learning_rate,
                              std::uint64_t seed) {
    if (epochs < 0) throw DomainError("train_base_classifier: epochs must be >= 0");
    const std::size_t m = data.features.cols();
    Network net = init_network(m, std::move(arch), seed);
    const std::size_t k_count = net.class_count();
    for (Label y : data.labels) {
        if (y >= k_count) throw DimensionError("train_base_classifier: label " + std::to_string(y) + " >= K");
    }

    std::vector<LayerSpec> layers = net.layers();
    const double inv_n = 1.0 / static_cast<double>(data.size());
    std::vector<double> p(k_count);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const Network current(m, layers);
        const Tensor z = forward(current, data.features);
        Tensor dz(z.rows(), k_count);
        for (std::size_t i = 0; i < z.rows(); ++i) {
            softmax_T(z.row(i), 1.0, p);
            for (std::size_t k = 0; k < k_count; ++k) {
                dz(i, k) = (p[k] - (k == data.labels[i] ? 1.0 : 0.0)) * inv_n;
            }
        }
        const auto grads = backward_params(current, data.features, dz);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (auto* d = std::get_if<DenseLayer>(&layers[l])) {
                for (std::size_t j = 0; j < d->weight.size(); ++j) d->weight[j] -= learning_rate * grads[l].d_weight[j];
                for (std::size_t j = 0; j < d->bias.size(); ++j) d->bias[j] -= learning_rate * grads[l].d_bias[j];
            }
        }
    }
    return Network(m, std::move(layers));
}

}  // namespace nclamp
