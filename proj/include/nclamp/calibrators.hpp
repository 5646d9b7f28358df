#pragma once

// Output-space post-hoc calibrators fitted on cached logits.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "nclamp/metrics.hpp"
#include "nclamp/network.hpp"
#include "nclamp/tensor.hpp"

namespace nclamp {

struct LogitSet {
    Tensor logits;  // n x K
    std::vector<Label> labels;

    LogitSet(Tensor logits, std::vector<Label> labels);

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t class_count() const noexcept { return logits.cols(); }
};

enum class CalibFamily { temperature, vector, matrix, dirichlet };

std::string_view family_name(CalibFamily family);
CalibFamily parse_family(std::string_view name);  // throws SchemaError

/// q = softmax(z/T) for the temperature family; softmax(W z + b) for vector
/// and matrix; softmax(W ln softmax(z) + b) for dirichlet. W and b are empty
/// for the temperature family, and W is diagonal for the vector family.
struct LinearCalib {
    CalibFamily family = CalibFamily::temperature;
    double temperature = 1.0;
    Tensor weight;  // K x K
    std::vector<double> bias;

    static LinearCalib with_temperature(double t);
    static LinearCalib identity(CalibFamily family, std::size_t class_count);

    friend bool operator==(const LinearCalib&, const LinearCalib&) = default;
};

struct FitConfig {
    double learning_rate = 0.001;
    int epochs = 1000;
    std::vector<double> odir_lambdas{1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3, 1e4};
};

// Gradient descent on log T for the summed NLL of softmax(Z/T), from T = 1.
// `loss_trace`, when given, receives the objective before every step and
// once after the last.
LinearCalib fit_temperature_nll(const LogitSet& data, const FitConfig& cfg = {},
                                std::vector<double>* loss_trace = nullptr);

// Lowest-ECE temperature over the given grid; ties resolve to the smaller T.
LinearCalib fit_temperature_grid(const LogitSet& data, std::span<const double> grid,
                                 std::size_t bin_count = kDefaultBins);
// Grid lo+step, lo+2*step, ..., hi.
LinearCalib fit_temperature_grid(const LogitSet& data, double lo, double hi, double step,
                                 std::size_t bin_count = kDefaultBins);

// Vector or matrix scaling by full-batch gradient descent on mean NLL from
// W = I, b = 0. With `odir_lambda`, adds lambda * odir_penalty(W, b).
LinearCalib fit_linear_scaling(const LogitSet& data, CalibFamily family, std::optional<double> odir_lambda,
                               const FitConfig& cfg = {});

struct OdirFit {
    LinearCalib calibrator;
    double lambda = 0.0;
    double calibration_ece = 0.0;
};

// Matrix scaling with ODIR; lambda chosen from cfg.odir_lambdas by calibration-set ECE.
OdirFit fit_ms_odir(const LogitSet& data, const FitConfig& cfg = {}, std::size_t bin_count = kDefaultBins);
// Same on pseudo-logits ln softmax(z).
OdirFit fit_dirichlet(const LogitSet& data, const FitConfig& cfg = {}, std::size_t bin_count = kDefaultBins);

// 1/(K(K-1)) sum_{j!=k} w_jk^2 + 1/K sum_j b_j^2
double odir_penalty(const Tensor& weight, std::span<const double> bias);

Tensor calibrated_probs(const LinearCalib& calib, const Tensor& logits);
ProbBatch apply_output_calibrator(const LinearCalib& calib, const LogitSet& data);

// ln softmax(z) row-wise.
Tensor log_softmax_rows(const Tensor& logits);

}  // namespace nclamp
