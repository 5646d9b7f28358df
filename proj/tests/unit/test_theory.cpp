#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "nclamp/clamping.hpp"
#include "nclamp/errors.hpp"
#include "nclamp/experiment.hpp"
#include "nclamp/metrics.hpp"
#include "nclamp/theory.hpp"

using namespace nclamp;

namespace {

// Bisection on ln T of sum_i z_i^T softmax(z_i/T) - target, using the long-double softmax.
double reference_temperature(const Tensor& z, std::span<const Label> y) {
    auto gap = [&](double t) {
        double total = 0.0;
        for (std::size_t i = 0; i < z.rows(); ++i) {
            const auto p = oracle::softmax(z.row(i), t);
            for (std::size_t k = 0; k < p.size(); ++k) total += z(i, k) * p[k];
            total -= z(i, y[i]);
        }
        return total;
    };
    double lo = std::log(1e-4), hi = std::log(1e4);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (gap(std::exp(mid)) > 0.0 ? lo : hi) = mid;
    }
    return std::exp(0.5 * (lo + hi));
}

}  // namespace

TEST_CASE("oracle examples") {
    const std::vector<Label> y0{0};
    const OracleSolution flat = max_entropy_oracle(Tensor(1, 2, {0.7, 0.7}), y0);
    CHECK(std::abs(flat.q(0, 0) - 0.5) < 1e-12);
    CHECK(std::abs(flat.q(0, 1) - 0.5) < 1e-12);

    const OracleSolution pinned = max_entropy_oracle(Tensor(1, 2, {1.0, 0.0}), y0);
    CHECK(pinned.boundary);
    CHECK(pinned.q(0, 0) == 1.0);
    CHECK(pinned.q(0, 1) == 0.0);
    CHECK(entropy(pinned.q.row(0)) == 0.0);

    CHECK_THROWS_AS(max_entropy_oracle(Tensor(13, 5), std::vector<Label>(13, 0)), DomainError);
    CHECK_THROWS_AS(max_entropy_oracle(Tensor(2, 3), std::vector<Label>{0}), DimensionError);
    CHECK_THROWS_AS(max_entropy_oracle(Tensor(1, 3), std::vector<Label>{3}), DimensionError);
}

TEST_CASE("oracle meets every constraint on random instances") {
    std::mt19937_64 rng(101);
    int solved = 0;
    while (solved < 20) {
        const LogitInstance inst = random_logit_instance(5, 3, rng);
        if (!has_positive_temperature_root(inst)) continue;
        ++solved;
        const OracleSolution s = max_entropy_oracle(inst.logits, inst.labels);
        CHECK(s.constraint_residual < 1e-8);
        CHECK(s.normalization_residual < 1e-8);
        CHECK(s.nonnegativity_violation < 1e-8);
        CHECK(s.stationarity < 1e-8);

        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < 5; ++i) {
            double sum = 0.0;
            for (std::size_t k = 0; k < 3; ++k) {
                CHECK(s.q(i, k) >= 0.0);
                sum += s.q(i, k);
                lhs += inst.logits(i, k) * s.q(i, k);
            }
            CHECK(std::abs(sum - 1.0) < 1e-8);
            rhs += inst.logits(i, inst.labels[i]);
        }
        CHECK(std::abs(lhs - rhs) < 1e-8);
    }
}

TEST_CASE("oracle solution is softmax at the matching temperature") {
    std::mt19937_64 rng(102);
    int checked = 0;
    while (checked < 60) {
        const std::size_t n = 2 + rng() % 6, k = 2 + rng() % 3;
        const LogitInstance inst = random_logit_instance(n, k, rng);
        if (!has_positive_temperature_root(inst)) continue;
        ++checked;
        const double t = reference_temperature(inst.logits, inst.labels);
        if (t > 0.99e4) continue;  // root beyond the bracket
        const OracleSolution s = max_entropy_oracle(inst.logits, inst.labels);
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto p = oracle::softmax(inst.logits.row(i), t);
            for (std::size_t c = 0; c < k; ++c) worst = std::max(worst, std::abs(s.q(i, c) - p[c]));
        }
        CAPTURE(t);
        CHECK(worst < 1e-6);

        const Lemma1Report r = verify_lemma1(inst.logits, inst.labels);
        CHECK(r.root_found);
        CHECK(r.passed);
        CHECK(r.max_deviation < 1e-3);
        CHECK(std::abs(r.temperature - t) < 1e-8 * t);
    }
}

TEST_CASE("verify_lemma1 boundary and degenerate cases") {
    const Tensor z = Tensor::from_rows({{2.0, 0.5, -1.0}, {0.0, 1.5, 0.3}, {-0.2, -0.1, 0.9}});
    const Lemma1Report top = verify_lemma1(z, std::vector<Label>{0, 1, 2});
    CHECK(top.boundary);
    CHECK_FALSE(top.root_found);
    CHECK(top.temperature == doctest::Approx(1e-4));
    CHECK(top.max_deviation < 1e-8);
    CHECK(top.passed);
    CHECK_FALSE(top.note.empty());

    const Tensor constant = Tensor::from_rows({{1.0, 1.0, 1.0}, {-0.5, -0.5, -0.5}});
    const Lemma1Report flat = verify_lemma1(constant, std::vector<Label>{0, 2});
    CHECK(flat.degenerate);
    CHECK(flat.temperature == 1.0);
    CHECK(flat.max_deviation < 1e-12);
    CHECK(flat.passed);
}

TEST_CASE("logit match gap decreases in T") {
    std::mt19937_64 rng(103);
    for (int trial = 0; trial < 30; ++trial) {
        const LogitInstance inst = random_logit_instance(5, 3, rng);
        double previous = INFINITY;
        for (double lt = -4.0; lt <= 4.0; lt += 0.25) {
            const double g = logit_match_gap(inst.logits, inst.labels, std::pow(10.0, lt));
            CHECK(g <= previous + 1e-12);
            previous = g;
        }
    }
}

TEST_CASE("first_order_check") {
    std::mt19937_64 rng(104);
    const Network net = oracle::random_net(rng, 4, 3, 0);
    const Batch calib(oracle::random_inputs(rng, 32, 4), oracle::random_labels(rng, 32, 3));
    const std::vector<double> dir{0.6, -0.3, 0.8, 0.1};

    const double zero[] = {0.0};
    const FirstOrderReport z = first_order_check(net, calib, dir, 1.0, zero);
    CHECK(z.rows[0].predicted == 0.0);
    CHECK(z.rows[0].measured == 0.0);

    std::vector<double> scales;
    for (int k = 0; k < 7; ++k) scales.push_back(1e-2 * std::pow(0.5, k));
    const FirstOrderReport r = first_order_check(net, calib, dir, 1.0, scales);
    for (const auto& row : r.rows) CHECK(row.gap >= 0.0);
    for (double ratio : r.gap_ratios()) {
        CHECK(ratio >= 0.15);
        CHECK(ratio <= 0.35);
    }

    const Network constant(4, {DenseLayer{4, 3, std::vector<double>(12), {0.3, -0.2, 0.1}}});
    for (const auto& row : first_order_check(constant, calib, dir, 1.0, scales).rows) {
        CHECK(row.predicted == 0.0);
        CHECK(row.measured == 0.0);
    }

    const double rising[] = {0.1, 0.2};
    CHECK_THROWS_AS(first_order_check(net, calib, dir, 1.0, rising), DomainError);
    CHECK_THROWS_AS(first_order_check(net, calib, std::vector<double>{1.0}, 1.0, zero), DimensionError);
}

TEST_CASE("bruteforce_box_argmax agrees with the sign rule") {
    std::mt19937_64 rng(105);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 1 + trial % 8;
        std::vector<double> g(m), alpha(m, 0.0), beta(m, 1.0), lower(m), upper(m);
        for (std::size_t j = 0; j < m; ++j) {
            g[j] = trial % 6 == 0 && j % 2 == 0 ? 0.0 : unit(rng);
            lower[j] = 0.4 * u(rng);
            upper[j] = 1.0 - 0.4 * u(rng);
        }
        const auto eta = box_slack(g, alpha, beta, lower, upper);
        std::vector<double> tilde(m);
        for (std::size_t j = 0; j < m; ++j) tilde[j] = g[j] > 0.0 ? eta[j] : g[j] < 0.0 ? -eta[j] : 0.0;
        CHECK(bruteforce_box_argmax(g, alpha, beta, lower, upper) == tilde);
    }

    const std::vector<double> a(3, 0.0), b(3, 1.0), lo{0.1, 0.2, 0.3}, hi{0.7, 0.8, 0.9};
    CHECK(bruteforce_box_argmax(std::vector<double>(3, 0.0), a, b, lo, hi) == std::vector<double>(3, 0.0));
    CHECK(bruteforce_box_argmax(std::vector<double>{1.0, -2.0, 0.5}, a, b, a, b) == std::vector<double>(3, 0.0));
    CHECK_THROWS_AS(bruteforce_box_argmax(std::vector<double>(11, 1.0), std::vector<double>(11, 0.0),
                                          std::vector<double>(11, 1.0), std::vector<double>(11, 0.5),
                                          std::vector<double>(11, 0.5)),
                    DomainError);
}
