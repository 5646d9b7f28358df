#pragma once

// Batch kernels for dense and relu layers.
//
// Two implementations share one signature set: `serial` is the plain
// reference, `parallel` splits the batch (or output neurons for weight
// gradients) across OpenMP threads. Every output entry is produced by one
// thread with the same summation order as the reference, so the two agree
// bit for bit at any thread count.

#include <span>

#include "nclamp/tensor.hpp"

namespace nclamp::kernels {

namespace serial {

// y = x W^T + b. W is out x in, row-major.
Tensor dense_forward(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
                     std::size_t out_dim);
// dx = dy W.
Tensor dense_backward_input(const Tensor& dy, std::span<const double> weight, std::size_t in_dim);
// dW = dy^T x (out x in, row-major) and db = column sums of dy.
void dense_backward_params(const Tensor& x, const Tensor& dy, std::span<double> d_weight,
                           std::span<double> d_bias);

Tensor relu_forward(const Tensor& x);
// Gradient is zero where the pre-activation is <= 0.
Tensor relu_backward(const Tensor& pre, const Tensor& dy);

}  // namespace serial

namespace parallel {

Tensor dense_forward(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
                     std::size_t out_dim);
Tensor dense_backward_input(const Tensor& dy, std::span<const double> weight, std::size_t in_dim);
void dense_backward_params(const Tensor& x, const Tensor& dy, std::span<double> d_weight,
                           std::span<double> d_bias);
Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& pre, const Tensor& dy);

}  // namespace parallel

// Number of threads the parallel kernels may use (1 when built without OpenMP).
int max_threads();

}  // namespace nclamp::kernels
