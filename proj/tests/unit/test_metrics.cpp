#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"

#include "nclamp/errors.hpp"
#include "nclamp/metrics.hpp"

using namespace nclamp;

namespace {

ProbBatch batch(std::vector<std::vector<double>> rows, std::vector<Label> labels) {
    return ProbBatch(Tensor::from_rows(rows), std::move(labels));
}

ProbBatch permuted(const ProbBatch& p, std::mt19937_64& rng) {
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    Tensor probs(p.size(), p.class_count());
    std::vector<Label> labels(p.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        std::copy(p.probs().row(order[i]).begin(), p.probs().row(order[i]).end(), probs.row(i).begin());
        labels[i] = p.labels()[order[i]];
    }
    return ProbBatch(std::move(probs), std::move(labels));
}

}  // namespace

TEST_CASE("softmax_T examples") {
    const auto a = softmax_T(std::vector<double>{0.0, 0.0}, 1.0);
    CHECK(a[0] == 0.5);
    CHECK(a[1] == 0.5);
    const auto b = softmax_T(std::vector<double>{std::log(2.0), 0.0}, 1.0);
    CHECK(b[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(b[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const auto c = softmax_T(std::vector<double>{10.0, 0.0}, 1e6);
    CHECK(std::abs(c[0] - 0.5) < 1e-5);
    CHECK(std::abs(c[1] - 0.5) < 1e-5);
    const auto big = softmax_T(std::vector<double>{1000.0, 0.0, -1000.0}, 1.0);
    CHECK(big[0] == 1.0);
    CHECK_THROWS_AS(softmax_T(std::vector<double>{1.0, 2.0}, 0.0), DomainError);
    CHECK_THROWS_AS(softmax_T(std::vector<double>{1.0, 2.0}, -2.0), DomainError);
}

TEST_CASE("softmax_T preserves the argmax for every temperature") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> unit(0.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> z(2 + trial % 5);
        for (double& v : z) v = unit(rng);
        for (double t : {0.01, 0.3, 1.0, 7.0, 1e3}) CHECK(argmax(softmax_T(z, t)) == argmax(z));
    }
}

TEST_CASE("entropy of softmax_T is nondecreasing in T") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> z(3 + trial % 4);
        for (double& v : z) v = unit(rng);
        double previous = 0.0;
        for (double t = 0.1; t <= 10.0; t += 0.1) {
            const double h = entropy(softmax_T(z, t));
            CHECK(h >= previous - 1e-15);
            previous = h;
        }
    }
}

TEST_CASE("mean_entropy examples") {
    CHECK(mean_entropy(batch({{1, 0, 0}, {0, 0, 1}}, {0, 2})) == 0.0);
    CHECK(mean_entropy(batch({{0.25, 0.25, 0.25, 0.25}}, {0})) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    CHECK(mean_entropy(batch({{0.5, 0.25, 0.25}}, {0})) == doctest::Approx(1.5 * std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("ProbBatch validates rows") {
    CHECK_THROWS_AS(batch({{0.5, 0.6}}, {0}), DomainError);
    CHECK_THROWS_AS(batch({{1.1, -0.1}}, {0}), DomainError);
    CHECK_THROWS_AS(batch({{0.5, 0.5}}, {2}), DimensionError);
    CHECK_THROWS_AS(batch({{0.5, 0.5}}, {0, 1}), DimensionError);
}

TEST_CASE("bin edges belong to the lower bin") {
    CHECK(bin_index(0.0, 2) == 0);
    CHECK(bin_index(0.5, 2) == 0);
    CHECK(bin_index(0.5000001, 2) == 1);
    CHECK(bin_index(1.0, 2) == 1);
    CHECK(bin_index(1.0, 15) == 14);
    CHECK(bin_index(1.0 / 15.0, 15) == 0);
}

TEST_CASE("ece examples") {
    CHECK(ece(batch({{1, 0}, {0, 1}}, {0, 1})).value == 0.0);

    // Bin (0.5, 1]: confidences 0.9 (right), 0.8 (wrong): |0.5 - 0.85|.
    // Bin (0, 0.5]: confidences 0.4 (right), 0.3 (wrong, tie to class 0): |0.5 - 0.35|.
    const ProbBatch p = batch({{0.9, 0.1 / 3, 0.1 / 3, 0.1 / 3},
                               {0.8, 0.1, 0.05, 0.05},
                               {0.4, 0.2, 0.2, 0.2},
                               {0.3, 0.3, 0.3, 0.1}},
                              {0, 1, 0, 1});
    const EceResult r = ece(p, 2);
    CHECK(r.value == doctest::Approx(0.25).epsilon(1e-12));
    REQUIRE(r.report.bins.size() == 2);
    CHECK(r.report.bins[0].count == 2);
    CHECK(r.report.bins[1].count == 2);
    CHECK(r.report.bins[1].confidence == doctest::Approx(0.85).epsilon(1e-15));

    for (double c : {0.35, 0.6, 0.99}) {
        CHECK(ece(batch({{c, 1.0 - c}}, {0})).value == doctest::Approx(1.0 - c).epsilon(1e-15));
    }
    CHECK_THROWS_AS(ece(p, 0), DomainError);
}

TEST_CASE("sce examples") {
    CHECK(sce(batch({{0.7, 0.3}, {0.6, 0.4}}, {0, 1}), 1) == doctest::Approx(0.15).epsilon(1e-12));
    CHECK(sce(batch({{1.0, 0.0}}, {0})) == 0.0);
    // Within each class bin the mean probability equals the label frequency.
    CHECK(sce(batch({{0.5, 0.5}, {0.5, 0.5}}, {0, 1}), 1) == 0.0);
    CHECK_THROWS_AS(sce(batch({{1.0, 0.0}}, {0}), 0), DomainError);
}

TEST_CASE("ace examples") {
    // Class 0 sorted: (0.1,0) (0.2,0) | (0.8,0) (0.9,1): |0 - 0.15| and |0.5 - 0.85|.
    // Class 1 sorted: (0.1,0) (0.2,1) | (0.8,1) (0.9,1): |0.5 - 0.15| and |1 - 0.85|.
    // (0.15 + 0.35 + 0.35 + 0.15) / 4 = 0.25.
    const ProbBatch p = batch({{0.9, 0.1}, {0.8, 0.2}, {0.2, 0.8}, {0.1, 0.9}}, {0, 1, 1, 1});
    CHECK(ace(p, 2) == doctest::Approx(0.25).epsilon(1e-12));

    // One range: class-averaged |overall accuracy - overall confidence|.
    const double c0 = std::abs(0.25 - 0.5);
    const double c1 = std::abs(0.75 - 0.5);
    CHECK(ace(p, 1) == doctest::Approx((c0 + c1) / 2).epsilon(1e-12));

    CHECK(ace(batch({{0.5, 0.5}, {0.5, 0.5}}, {0, 1}), 1) == 0.0);
    CHECK_THROWS_AS(ace(p, 5), DomainError);
    CHECK_THROWS_AS(ace(p, 0), DomainError);
}

TEST_CASE("nll and accuracy examples") {
    CHECK(nll(batch({{1, 0}, {0, 1}}, {0, 1})) == 0.0);
    CHECK(nll(batch({{0.5, 0.5}}, {0})) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(nll(batch({{0.5, 0.5}, {0.75, 0.25}}, {0, 1})) == doctest::Approx(std::log(2.0) + std::log(4.0)).epsilon(1e-15));
    CHECK(std::isfinite(nll(batch({{1.0, 0.0}}, {1}))));

    CHECK(accuracy(batch({{1, 0}, {0, 1}}, {0, 1})) == 1.0);
    CHECK(accuracy(batch({{1, 0}, {0, 1}}, {1, 0})) == 0.0);
    CHECK(accuracy(batch({{0.5, 0.5}}, {0})) == 1.0);
    CHECK(accuracy(batch({{0.5, 0.5}}, {1})) == 0.0);
}

TEST_CASE("metrics match brute-force references on random batches") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> rows(1, 64), classes(2, 6), bins(1, 20);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = rows(rng), k = classes(rng), m = bins(rng);
        const std::size_t r = 1 + rng() % n;
        const ProbBatch p(oracle::random_probs(rng, n, k), oracle::random_labels(rng, n, k));
        const oracle::Probs o = oracle::to_probs(p.probs(), p.labels());
        CHECK(std::abs(ece(p, m).value - oracle::ece(o, m)) < 1e-12);
        CHECK(std::abs(sce(p, m) - oracle::sce(o, m)) < 1e-12);
        CHECK(std::abs(ace(p, r) - oracle::ace(o, r)) < 1e-12);
        CHECK(std::abs(nll(p) - oracle::nll(o)) < 1e-12 * std::max(1.0, oracle::nll(o)));
        CHECK(std::abs(mean_entropy(p) - oracle::mean_entropy(o)) < 1e-12);
        CHECK(accuracy(p) == oracle::accuracy(o));
    }
}

TEST_CASE("binned metrics lie in [0, 1] and ignore row order") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng() % 64, k = 2 + rng() % 5;
        const ProbBatch p(oracle::random_probs(rng, n, k), oracle::random_labels(rng, n, k));
        const std::size_t r = 1 + rng() % n;
        const EceResult e = ece(p, 10);
        const double s = sce(p, 10);
        const double a = ace(p, r);
        for (double v : {e.value, s, a}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        std::size_t total = 0;
        for (const Bin& b : e.report.bins) total += b.count;
        CHECK(total == n);

        const ProbBatch q = permuted(p, rng);
        CHECK(std::abs(ece(q, 10).value - e.value) < 1e-12);
        CHECK(std::abs(sce(q, 10) - s) < 1e-12);
    }
}

// Confidence ties can move samples between ranges, so ACE is compared on tie-free batches.
TEST_CASE("ace ignores row order when confidences are distinct") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng() % 40, k = 2 + rng() % 4;
        Tensor probs(n, k);
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (double& v : probs.row(i)) sum += (v = u(rng));
            for (double& v : probs.row(i)) v /= sum;
        }
        const ProbBatch p(std::move(probs), oracle::random_labels(rng, n, k));
        const std::size_t r = 1 + rng() % n;
        CHECK(std::abs(ace(permuted(p, rng), r) - ace(p, r)) < 1e-12);
    }
}

TEST_CASE("evaluate_metrics and the reliability CSV") {
    const ProbBatch p = batch({{0.9, 0.1}, {0.8, 0.2}, {0.2, 0.8}, {0.1, 0.9}}, {0, 1, 1, 1});
    const MetricReport r = evaluate_metrics(p, 2, 2);
    CHECK(r.accuracy == 0.75);
    CHECK(r.ece == ece(p, 2).value);
    CHECK(r.sce == sce(p, 2));
    CHECK(r.ace == ace(p, 2));
    CHECK(r.nll == nll(p));
    CHECK(r.mean_entropy == mean_entropy(p));
    CHECK(r.bins == 2);
    CHECK(r.ranges == 2);

    std::ostringstream csv;
    write_reliability_csv(csv, ece(p, 2).report);
    std::istringstream lines(csv.str());
    std::string header;
    std::getline(lines, header);
    CHECK(header == "bin_lower,bin_upper,count,accuracy,confidence");
    int count = 0;
    for (std::string line; std::getline(lines, line);) ++count;
    CHECK(count == 2);
}
