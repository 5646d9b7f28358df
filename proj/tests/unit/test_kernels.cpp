#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "nclamp/kernels.hpp"

using namespace nclamp;

namespace {

std::vector<double> normal_values(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

}  // namespace

TEST_CASE("parallel kernels match the serial reference bit for bit") {
    std::mt19937_64 rng(11);
    const std::size_t shapes[][3] = {{1, 1, 2}, {7, 3, 5}, {64, 17, 9}, {513, 33, 65}};
    for (const auto& s : shapes) {
        const std::size_t n = s[0], in = s[1], out = s[2];
        CAPTURE(n);
        const Tensor x(n, in, normal_values(rng, n * in));
        const Tensor dy(n, out, normal_values(rng, n * out));
        const std::vector<double> w = normal_values(rng, out * in);
        const std::vector<double> b = normal_values(rng, out);

        CHECK(kernels::serial::dense_forward(x, w, b, out) == kernels::parallel::dense_forward(x, w, b, out));
        CHECK(kernels::serial::dense_backward_input(dy, w, in) == kernels::parallel::dense_backward_input(dy, w, in));

        std::vector<double> dw_s(out * in), db_s(out), dw_p(out * in), db_p(out);
        kernels::serial::dense_backward_params(x, dy, dw_s, db_s);
        kernels::parallel::dense_backward_params(x, dy, dw_p, db_p);
        CHECK(dw_s == dw_p);
        CHECK(db_s == db_p);

        CHECK(kernels::serial::relu_forward(x) == kernels::parallel::relu_forward(x));
        const Tensor g(n, in, normal_values(rng, n * in));
        CHECK(kernels::serial::relu_backward(x, g) == kernels::parallel::relu_backward(x, g));
    }
}

TEST_CASE("dense kernels agree with a direct loop") {
    std::mt19937_64 rng(12);
    const std::size_t n = 5, in = 4, out = 3;
    const Tensor x(n, in, normal_values(rng, n * in));
    const std::vector<double> w = normal_values(rng, out * in);
    const std::vector<double> b = normal_values(rng, out);
    const Tensor y = kernels::serial::dense_forward(x, w, b, out);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out; ++o) {
            double s = b[o];
            for (std::size_t j = 0; j < in; ++j) s += w[o * in + j] * x(i, j);
            CHECK(y(i, o) == doctest::Approx(s).epsilon(1e-14));
        }
    }
}

TEST_CASE("relu gradient is zero at and below zero") {
    const Tensor pre(1, 3, {-1.0, 0.0, 2.0});
    const Tensor dy(1, 3, {5.0, 5.0, 5.0});
    const Tensor dx = kernels::serial::relu_backward(pre, dy);
    CHECK(dx(0, 0) == 0.0);
    CHECK(dx(0, 1) == 0.0);
    CHECK(dx(0, 2) == 5.0);
    CHECK(kernels::max_threads() >= 1);
}
