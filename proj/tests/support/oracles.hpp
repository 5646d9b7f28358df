#pragma once

// Independent reference implementations and random fixtures used by the unit
// tests and the acceptance runner. Nothing here calls the library routine it
// is meant to check.

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "nclamp/network.hpp"
#include "nclamp/tensor.hpp"

namespace oracle {

using nclamp::Label;
using nclamp::Tensor;

struct Probs {
    std::vector<std::vector<double>> p;
    std::vector<Label> y;
};

Probs to_probs(const Tensor& t, std::span<const Label> labels);

// Straight transcriptions of the metric definitions with nested loops.
double ece(const Probs& b, std::size_t bins);
double sce(const Probs& b, std::size_t bins);
double ace(const Probs& b, std::size_t ranges);
double nll(const Probs& b);
double mean_entropy(const Probs& b);
double accuracy(const Probs& b);

// exp(z/T) / sum exp(z/T) evaluated in long double without max-shift.
std::vector<double> softmax(std::span<const double> z, double t);

// Forward pass written per sample with explicit loops over the layer list.
std::vector<double> forward_row(const nclamp::Network& net, std::span<const double> x);

double entropy_of_logits(std::span<const double> z, double t);
double focal(std::span<const double> p, Label y, double gamma);
double clamp_objective(const nclamp::Network& net, const nclamp::Batch& b, std::span<const double> delta, double t,
                       double gamma, double lambda);

// Central differences of f at x with step h per coordinate.
std::vector<double> central_diff(const std::function<double(std::span<const double>)>& f,
                                 std::span<const double> x, double h);

// ||a - b|| / max(||a||, ||b||, floor)
double rel_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

// Random fixtures.
Tensor random_probs(std::mt19937_64& rng, std::size_t n, std::size_t k);
std::vector<Label> random_labels(std::mt19937_64& rng, std::size_t n, std::size_t k);
nclamp::Network random_net(std::mt19937_64& rng, std::size_t m, std::size_t k, std::size_t hidden_layers);
Tensor random_inputs(std::mt19937_64& rng, std::size_t n, std::size_t m);

// Worst relative error over the gradient checks on one random net.
struct GradientErrors {
    double backward_input = 0.0;
    double backward_params = 0.0;
    double entropy_input = 0.0;
    double objective_delta = 0.0;
    double objective_temperature = 0.0;
    double worst() const;
};
GradientErrors gradient_errors(std::mt19937_64& rng, std::size_t m, std::size_t k);

}  // namespace oracle
