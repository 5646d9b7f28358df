#pragma once

// Neural Clamping: a universal additive input perturbation delta and an
// output temperature T, learned jointly on a calibration set for a fixed
// classifier by minimizing
//
//     sum_i FL_gamma(softmax(f(x_i + delta) / T), y_i) + lambda * ||delta||^2
//
// where FL_gamma(p, y) = -(1 - p_y)^gamma ln p_y is the focal loss.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "nclamp/metrics.hpp"
#include "nclamp/network.hpp"
#include "nclamp/tensor.hpp"

namespace nclamp {

struct ClampParams {
    std::vector<double> delta;  // input space, length m
    double temperature = 1.0;

    friend bool operator==(const ClampParams&, const ClampParams&) = default;
};

enum class DeltaInit { random, data_driven, zero };

struct ClampHyper {
    double gamma = 0.0;
    double lambda = 0.0;
    double learning_rate = 0.001;
    std::size_t batch_size = 512;  // capped at n
    int epochs = 100;
    DeltaInit init = DeltaInit::random;
    std::uint64_t init_seed = 0;  // random init only
    // Feasible input box [alpha, beta]; empty means [0, 1]^m.
    std::vector<double> lower_bound;
    std::vector<double> upper_bound;
    // Switching one off keeps that parameter at its initial value.
    bool train_delta = true;
    bool train_temperature = true;
};

struct InitDiagnostics {
    std::vector<double> g;      // sum of per-sample entropy input gradients
    std::vector<double> lower;  // per-dimension min over the calibration set
    std::vector<double> upper;  // per-dimension max
    std::vector<double> slack;  // distance to the box face g points at
    std::vector<double> delta_tilde;
};

double focal_loss(std::span<const double> p, Label y, double gamma);

struct ObjectiveGrad {
    double value = 0.0;
    std::vector<double> d_delta;
    double d_temperature = 0.0;
};

double clamp_objective(const Network& net, const Batch& batch, std::span<const double> delta, double temperature,
                       double gamma, double lambda);
ObjectiveGrad clamp_objective_grad(const Network& net, const Batch& batch, std::span<const double> delta,
                                   double temperature, double gamma, double lambda);

// i.i.d. N(0, 0.01) entries.
std::vector<double> random_init_delta(std::size_t m, std::uint64_t seed);

// delta~ = sign(g) * slack, the maximizer of delta^T g over the perturbations
// that keep every calibration input inside [alpha, beta].
InitDiagnostics data_driven_init(const Network& net, const Batch& calib, double temperature,
                                 std::span<const double> alpha, std::span<const double> beta);

// Per-dimension slack: lower - alpha where g < 0, beta - upper where g > 0,
// else 0; negative slack is clamped to 0.
std::vector<double> box_slack(std::span<const double> g, std::span<const double> alpha,
                              std::span<const double> beta, std::span<const double> lower,
                              std::span<const double> upper);

struct ClampFit {
    ClampParams params;
    std::vector<double> epoch_loss;  // per epoch, sum of the mini-batch objectives after each step
    double final_loss = 0.0;         // full objective at the returned parameters
};

// Mini-batch SGD over (delta, ln T) with a seeded shuffle every epoch. A step
// that would raise the mini-batch objective is halved (up to 40 times) and
// dropped if it still does; each search starts from twice the previous
// accepted step, never above the learning rate. Throws NumericalError if the objective becomes
// non-finite.
ClampFit fit_neural_clamping(const Network& net, const Batch& calib, const ClampHyper& hyper, std::uint64_t seed);

enum class ClampMode { none, input_only, output_only, joint };

// softmax(f(x + delta)/T) for joint; the other modes drop delta and/or T.
Tensor apply_clamping(const Network& net, const ClampParams& params, const Tensor& x,
                      ClampMode mode = ClampMode::joint);

struct SweepRow {
    double gamma = 0.0;
    double lambda = 0.0;
    double ece = 0.0;
    double entropy = 0.0;
    double final_loss = 0.0;
};

struct SweepResult {
    double best_gamma = 0.0;
    double best_lambda = 0.0;
    ClampParams params;
    std::vector<SweepRow> table;  // gamma-major grid order
};

// Fits every (gamma, lambda) cell and keeps the lowest calibration-set ECE;
// ties go to the smaller gamma, then the smaller lambda. Cells run in parallel.
SweepResult sweep_hyper(const Network& net, const Batch& calib, std::span<const double> gamma_grid,
                        std::span<const double> lambda_grid, const ClampHyper& base, std::uint64_t seed,
                        std::size_t bin_count = kDefaultBins);

// CSV with header gamma,lambda,ece,entropy,final_loss.
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> table);

}  // namespace nclamp
