#pragma once

// Fixed-weight dense/relu classifier with reverse-mode gradients.

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "nclamp/tensor.hpp"

namespace nclamp {

using Label = std::uint32_t;

struct DenseLayer {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::vector<double> weight;  // out_dim x in_dim, row-major
    std::vector<double> bias;    // out_dim

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct ReluLayer {
    friend bool operator==(const ReluLayer&, const ReluLayer&) = default;
};

using LayerSpec = std::variant<DenseLayer, ReluLayer>;

/// Immutable classifier f: R^m -> R^K. Construction validates that layer
/// dimensions chain from `input_dim` and that the final width is at least 2;
/// violations throw SchemaError naming the offending layer index.
class Network {
public:
    Network(std::size_t input_dim, std::vector<LayerSpec> layers);

    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t class_count() const noexcept { return class_count_; }
    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }

    friend bool operator==(const Network&, const Network&) = default;

private:
    std::size_t input_dim_;
    std::size_t class_count_;
    std::vector<LayerSpec> layers_;
};

/// Labelled feature matrix.
struct Batch {
    Tensor features;  // n x m
    std::vector<Label> labels;

    Batch() = default;
    Batch(Tensor features, std::vector<Label> labels);

    std::size_t size() const noexcept { return labels.size(); }

    friend bool operator==(const Batch&, const Batch&) = default;
};

// Gradient of one layer. Both vectors are empty for relu layers.
struct LayerGrad {
    std::vector<double> d_weight;
    std::vector<double> d_bias;
};

Tensor forward(const Network& net, const Tensor& x);

// Vector-Jacobian product: d(sum_ik dz_ik * z_ik)/dx.
Tensor backward_input(const Network& net, const Tensor& x, const Tensor& dz);

// Same contraction differentiated with respect to every dense layer's parameters.
std::vector<LayerGrad> backward_params(const Network& net, const Tensor& x, const Tensor& dz);

// Row i is the gradient of H(softmax(f(x_i)/T)) with respect to x_i.
Tensor entropy_input_grad(const Network& net, const Tensor& x, double temperature);

// Layer list for a relu MLP with the given hidden widths. Weights are zero.
std::vector<LayerSpec> mlp_architecture(std::size_t input_dim, std::span<const std::size_t> hidden,
                                        std::size_t class_count);

// Seeded initialization: weights ~ N(0, 1/in_dim), biases 0.
Network init_network(std::size_t input_dim, std::vector<LayerSpec> arch, std::uint64_t seed);

/// Full-batch gradient descent on mean cross entropy, starting from
/// init_network(arch, seed). Deterministic for a given seed.
Network train_base_classifier(const Batch& data, std::vector<LayerSpec> arch, int epochs, double learning_rate,
                              std::uint64_t seed);

}  // namespace nclamp
