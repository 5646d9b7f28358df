#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "nclamp/data.hpp"
#include "nclamp/errors.hpp"
#include "nclamp/metrics.hpp"
#include "nclamp/network.hpp"

using namespace nclamp;

namespace {

Network dense_net(std::size_t in, std::size_t out, std::vector<double> w, std::vector<double> b) {
    return Network(in, {DenseLayer{in, out, std::move(w), std::move(b)}});
}

Network zero_net(std::size_t m, std::size_t k) {
    return Network(m, {DenseLayer{m, 3, std::vector<double>(m * 3), std::vector<double>(3)}, ReluLayer{},
                       DenseLayer{3, k, std::vector<double>(3 * k), std::vector<double>(k)}});
}

std::vector<double> flat(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("tensor construction checks shape and finiteness") {
    CHECK_THROWS_AS(Tensor(2, 2, {1.0, 2.0, 3.0}), DimensionError);
    CHECK_THROWS_AS(Tensor(1, 2, {1.0, std::nan("")}), NumericalError);
    CHECK_THROWS_AS(Tensor(1, 1, {INFINITY}), NumericalError);
    CHECK_THROWS_AS(Tensor::from_rows({{1.0, 2.0}, {3.0}}), DimensionError);
    const Tensor t = Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}});
    CHECK(t(1, 0) == 3.0);
    CHECK(t.size() == 4);
}

TEST_CASE("network construction names the offending layer") {
    try {
        Network(2, {DenseLayer{2, 3, std::vector<double>(6), std::vector<double>(3)}, ReluLayer{},
                    DenseLayer{4, 2, std::vector<double>(8), std::vector<double>(2)}});
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("layer 2") != std::string::npos);
    }
    CHECK_THROWS_AS(Network(2, {DenseLayer{2, 1, {1.0, 1.0}, {0.0}}}), SchemaError);
    CHECK_THROWS_AS(Network(2, {DenseLayer{2, 2, {1.0, 1.0}, {0.0, 0.0}}}), SchemaError);
}

TEST_CASE("forward examples") {
    std::mt19937_64 rng(1);
    const Tensor x = oracle::random_inputs(rng, 4, 3);
    CHECK(flat(forward(zero_net(3, 2), x)) == std::vector<double>(8, 0.0));

    const Network id = dense_net(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0});
    CHECK(forward(id, x) == x);

    // W1 = [[1,-1],[2,1]], b1 = [0,-1]; W2 = [[1,2],[-1,1]], b2 = [0.5,0].
    // x = (1, 2): h = relu((-1, 3)) = (0, 3); z = (0 + 6 + 0.5, 0 + 3) = (6.5, 3).
    const Network two(2, {DenseLayer{2, 2, {1, -1, 2, 1}, {0, -1}}, ReluLayer{},
                          DenseLayer{2, 2, {1, 2, -1, 1}, {0.5, 0}}});
    const Tensor z = forward(two, Tensor(1, 2, {1.0, 2.0}));
    CHECK(z(0, 0) == 6.5);
    CHECK(z(0, 1) == 3.0);

    CHECK_THROWS_AS(forward(two, Tensor(1, 3)), DimensionError);
}

TEST_CASE("forward is independent of batch partitioning") {
    std::mt19937_64 rng(2);
    const Network net = oracle::random_net(rng, 5, 4, 2);
    const Tensor x = oracle::random_inputs(rng, 37, 5);
    const Tensor whole = forward(net, x);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const Tensor one = forward(net, Tensor(1, 5, {x.row(i).begin(), x.row(i).end()}));
        CHECK(std::equal(one.values().begin(), one.values().end(), whole.row(i).begin()));
    }
    CHECK(forward(net, x) == whole);
}

TEST_CASE("backward_input examples") {
    const Network id = dense_net(2, 2, {1, 0, 0, 1}, {0, 0});
    const Tensor dx = backward_input(id, Tensor(3, 2), Tensor(3, 2, std::vector<double>(6, 1.0)));
    CHECK(flat(dx) == std::vector<double>(6, 1.0));

    // First hidden unit is dead at x = (1, 1): pre-activation 1 - 2 = -1.
    const Network dead(2, {DenseLayer{2, 2, {1, -2, 1, 1}, {0, 0}}, ReluLayer{},
                           DenseLayer{2, 2, {1, 0, 0, 1}, {0, 0}}});
    const Tensor g = backward_input(dead, Tensor(1, 2, {1.0, 1.0}), Tensor(1, 2, {1.0, 0.0}));
    CHECK(g(0, 0) == 0.0);
    CHECK(g(0, 1) == 0.0);

    CHECK_THROWS_AS(backward_input(id, Tensor(3, 2), Tensor(2, 2)), DimensionError);
}

TEST_CASE("backward_input matches central differences at step 1e-5") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const Network net = oracle::random_net(rng, 4, 3, 2);
        const Tensor x = oracle::random_inputs(rng, 1, 4);
        const Tensor dz(1, 3, {0.7, -1.3, 0.4});
        auto f = [&](std::span<const double> v) {
            const auto z = oracle::forward_row(net, v);
            return 0.7 * z[0] - 1.3 * z[1] + 0.4 * z[2];
        };
        const auto fd = oracle::central_diff(f, x.values(), 1e-5);
        CHECK(oracle::rel_error(backward_input(net, x, dz).values(), fd) < 1e-6);
    }
}

TEST_CASE("backward_input is linear in the upstream gradient") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        const Network net = oracle::random_net(rng, 5, 4, 2);
        const Tensor x = oracle::random_inputs(rng, 6, 5);
        Tensor a(6, 4), b(6, 4), ab(6, 4);
        for (std::size_t k = 0; k < a.size(); ++k) {
            a.values()[k] = unit(rng);
            b.values()[k] = unit(rng);
            ab.values()[k] = a.values()[k] + b.values()[k];
        }
        const Tensor ga = backward_input(net, x, a);
        const Tensor gb = backward_input(net, x, b);
        const Tensor gab = backward_input(net, x, ab);
        for (std::size_t k = 0; k < gab.size(); ++k) {
            CHECK(std::abs(gab.values()[k] - ga.values()[k] - gb.values()[k]) < 1e-12);
        }
    }
}

TEST_CASE("backward_params examples") {
    const Network net = dense_net(3, 2, {1, 2, 3, 4, 5, 6}, {0.1, 0.2});
    const Tensor x(1, 3, {0.5, -1.0, 2.0});
    const Tensor dz(1, 2, {3.0, -2.0});
    const auto grads = backward_params(net, x, dz);
    REQUIRE(grads.size() == 1);
    CHECK(grads[0].d_weight == std::vector<double>{1.5, -3.0, 6.0, -1.0, 2.0, -4.0});
    CHECK(grads[0].d_bias == std::vector<double>{3.0, -2.0});

    std::mt19937_64 rng(5);
    const Network deep = oracle::random_net(rng, 3, 3, 2);
    for (const auto& g : backward_params(deep, oracle::random_inputs(rng, 4, 3), Tensor(4, 3))) {
        for (double v : g.d_weight) CHECK(v == 0.0);
        for (double v : g.d_bias) CHECK(v == 0.0);
    }
}

TEST_CASE("gradient suite on 20 random nets") {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<std::size_t> dim(2, 6);
    for (int trial = 0; trial < 20; ++trial) {
        const oracle::GradientErrors e = oracle::gradient_errors(rng, dim(rng), dim(rng));
        CHECK(e.backward_input < 1e-5);
        CHECK(e.backward_params < 1e-5);
        CHECK(e.entropy_input < 1e-5);
    }
}

TEST_CASE("entropy_input_grad examples") {
    std::mt19937_64 rng(7);
    const Tensor x = oracle::random_inputs(rng, 5, 3);
    CHECK(flat(entropy_input_grad(zero_net(3, 4), x, 1.0)) == std::vector<double>(15, 0.0));

    // Constant logits through a nonzero bias only.
    const Network constant = dense_net(3, 2, std::vector<double>(6, 0.0), {1.0, -2.0});
    CHECK(flat(entropy_input_grad(constant, x, 0.7)) == std::vector<double>(15, 0.0));

    CHECK_THROWS_AS(entropy_input_grad(constant, x, 0.0), DomainError);
    CHECK_THROWS_AS(entropy_input_grad(constant, x, -1.0), DomainError);
}

TEST_CASE("entropy_input_grad on a linear binary model has the closed form") {
    const std::vector<double> w{0.8, -0.3, 1.1, 0.2, 0.5, -0.9};
    const Network net = dense_net(3, 2, w, {0.0, 0.0});
    const Tensor x(1, 3, {0.3, -0.6, 0.9});
    const double t = 1.7;
    const double u = ((w[0] - w[3]) * 0.3 + (w[1] - w[4]) * -0.6 + (w[2] - w[5]) * 0.9) / t;
    const double s = 1.0 / (1.0 + std::exp(-u));
    const double scale = std::log((1.0 - s) / s) * s * (1.0 - s) / t;
    const Tensor g = entropy_input_grad(net, x, t);
    for (std::size_t j = 0; j < 3; ++j) CHECK(g(0, j) == doctest::Approx(scale * (w[j] - w[3 + j])).epsilon(1e-12));
}

TEST_CASE("entropy_input_grad matches central differences") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        const Network net = oracle::random_net(rng, 4, 3, 1);
        const Tensor x = oracle::random_inputs(rng, 1, 4);
        const double t = 0.5 + trial * 0.4;
        auto f = [&](std::span<const double> v) { return oracle::entropy_of_logits(oracle::forward_row(net, v), t); };
        const auto fd = oracle::central_diff(f, x.values(), 1e-5);
        CHECK(oracle::rel_error(entropy_input_grad(net, x, t).values(), fd) < 1e-5);
    }
}

TEST_CASE("train_base_classifier") {
    SyntheticSpec spec;
    spec.classes = 3;
    spec.dim = 2;
    spec.samples = 300;
    spec.cluster_std = 0.3;
    spec.means = {{-4.0, 0.0}, {4.0, 0.0}, {0.0, 6.0}};
    const Dataset data = gen_synthetic(spec, 21);
    const std::size_t hidden[] = {8};

    const Network init = init_network(2, mlp_architecture(2, hidden, 3), 5);
    CHECK(train_base_classifier(data.batch, mlp_architecture(2, hidden, 3), 0, 0.5, 5) == init);

    const Network a = train_base_classifier(data.batch, mlp_architecture(2, hidden, 3), 50, 0.5, 5);
    const Network b = train_base_classifier(data.batch, mlp_architecture(2, hidden, 3), 50, 0.5, 5);
    CHECK(a == b);

    const Network trained = train_base_classifier(data.batch, mlp_architecture(2, hidden, 3), 500, 0.5, 5);
    const ProbBatch p(softmax_rows(forward(trained, data.batch.features), 1.0), data.batch.labels);
    CHECK(accuracy(p) >= 0.95);

    CHECK_THROWS_AS(train_base_classifier(data.batch, mlp_architecture(2, hidden, 3), -1, 0.5, 5), DomainError);
}
