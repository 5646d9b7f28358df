#include "nclamp/kernels.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nclamp::kernels {

namespace {

// Below this many multiply-adds the thread startup costs more than it saves.
constexpr std::int64_t kParallelWork = 1 << 14;

// W^T, in x out, so the forward inner loop runs over contiguous outputs.
inline std::vector<double> transposed(std::span<const double> weight, std::size_t in_dim, std::size_t out_dim) {
    std::vector<double> wt(in_dim * out_dim);
    for (std::size_t o = 0; o < out_dim; ++o) {
        for (std::size_t j = 0; j < in_dim; ++j) wt[j * out_dim + o] = weight[o * in_dim + j];
    }
    return wt;
}

// y_o = (sum_j w_oj x_j) + b_o, with the sum taken in increasing j.
inline void dense_row(const double* x, const double* wt, const double* bias, double* y, std::size_t in_dim,
                      std::size_t out_dim) {
    for (std::size_t o = 0; o < out_dim; ++o) y[o] = 0.0;
    for (std::size_t j = 0; j < in_dim; ++j) {
        const double xj = x[j];
        const double* w = wt + j * out_dim;
        for (std::size_t o = 0; o < out_dim; ++o) y[o] += w[o] * xj;
    }
    for (std::size_t o = 0; o < out_dim; ++o) y[o] += bias[o];
}

inline void dense_back_row(const double* dy, const double* weight, double* dx, std::size_t in_dim,
                           std::size_t out_dim) {
    for (std::size_t j = 0; j < in_dim; ++j) dx[j] = 0.0;
    for (std::size_t o = 0; o < out_dim; ++o) {
        const double g = dy[o];
        const double* w = weight + o * in_dim;
        for (std::size_t j = 0; j < in_dim; ++j) dx[j] += g * w[j];
    }
}

// One output neuron's weight and bias gradient, summed over the batch in row order.
inline void dense_param_neuron(const Tensor& x, const Tensor& dy, std::size_t o, double* d_weight_row,
                               double* d_bias) {
    const std::size_t n = x.rows();
    const std::size_t in_dim = x.cols();
    for (std::size_t j = 0; j < in_dim; ++j) d_weight_row[j] = 0.0;
    double db = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double g = dy(i, o);
        const auto xi = x.row(i);
        for (std::size_t j = 0; j < in_dim; ++j) d_weight_row[j] += g * xi[j];
        db += g;
    }
    *d_bias = db;
}

}  // namespace

namespace serial {

Tensor dense_forward(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
                     std::size_t out_dim) {
    Tensor y(x.rows(), out_dim);
    const auto wt = transposed(weight, x.cols(), out_dim);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        dense_row(x.row(i).data(), wt.data(), bias.data(), y.row(i).data(), x.cols(), out_dim);
    }
    return y;
}

Tensor dense_backward_input(const Tensor& dy, std::span<const double> weight, std::size_t in_dim) {
    Tensor dx(dy.rows(), in_dim);
    for (std::size_t i = 0; i < dy.rows(); ++i) {
        dense_back_row(dy.row(i).data(), weight.data(), dx.row(i).data(), in_dim, dy.cols());
    }
    return dx;
}

void dense_backward_params(const Tensor& x, const Tensor& dy, std::span<double> d_weight, std::span<double> d_bias) {
    for (std::size_t o = 0; o < dy.cols(); ++o) {
        dense_param_neuron(x, dy, o, d_weight.data() + o * x.cols(), d_bias.data() + o);
    }
}

Tensor relu_forward(const Tensor& x) {
    Tensor y(x.rows(), x.cols());
    auto in = x.values();
    auto out = y.values();
    for (std::size_t k = 0; k < in.size(); ++k) out[k] = in[k] > 0.0 ? in[k] : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& pre, const Tensor& dy) {
    Tensor dx(pre.rows(), pre.cols());
    auto p = pre.values();
    auto g = dy.values();
    auto out = dx.values();
    for (std::size_t k = 0; k < p.size(); ++k) out[k] = p[k] > 0.0 ? g[k] : 0.0;
    return dx;
}

}  // namespace serial

namespace parallel {

Tensor dense_forward(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
                     std::size_t out_dim) {
    Tensor y(x.rows(), out_dim);
    const auto wt = transposed(weight, x.cols(), out_dim);
    const auto n = static_cast<std::int64_t>(x.rows());
    const std::int64_t work = n * static_cast<std::int64_t>(x.cols() * out_dim);
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        dense_row(x.row(r).data(), wt.data(), bias.data(), y.row(r).data(), x.cols(), out_dim);
    }
    return y;
}

Tensor dense_backward_input(const Tensor& dy, std::span<const double> weight, std::size_t in_dim) {
    Tensor dx(dy.rows(), in_dim);
    const auto n = static_cast<std::int64_t>(dy.rows());
    const std::int64_t work = n * static_cast<std::int64_t>(dy.cols() * in_dim);
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        dense_back_row(dy.row(r).data(), weight.data(), dx.row(r).data(), in_dim, dy.cols());
    }
    return dx;
}

void dense_backward_params(const Tensor& x, const Tensor& dy, std::span<double> d_weight, std::span<double> d_bias) {
    const auto out_dim = static_cast<std::int64_t>(dy.cols());
    const std::int64_t work = out_dim * static_cast<std::int64_t>(x.rows() * x.cols());
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (std::int64_t o = 0; o < out_dim; ++o) {
        const auto k = static_cast<std::size_t>(o);
        dense_param_neuron(x, dy, k, d_weight.data() + k * x.cols(), d_bias.data() + k);
    }
}

Tensor relu_forward(const Tensor& x) {
    Tensor y(x.rows(), x.cols());
    auto in = x.values();
    auto out = y.values();
    const auto len = static_cast<std::int64_t>(in.size());
#pragma omp parallel for schedule(static) if (len > kParallelWork)
    for (std::int64_t k = 0; k < len; ++k) out[k] = in[k] > 0.0 ? in[k] : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& pre, const Tensor& dy) {
    Tensor dx(pre.rows(), pre.cols());
    auto p = pre.values();
    auto g = dy.values();
    auto out = dx.values();
    const auto len = static_cast<std::int64_t>(p.size());
#pragma omp parallel for schedule(static) if (len > kParallelWork)
    for (std::int64_t k = 0; k < len; ++k) out[k] = p[k] > 0.0 ? g[k] : 0.0;
    return dx;
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace nclamp::kernels
