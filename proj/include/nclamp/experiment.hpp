#pragma once

// Shared setup for the command-line driver and the acceptance runs.

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "nclamp/network.hpp"
#include "nclamp/tensor.hpp"

namespace nclamp {

struct ExperimentSplits {
    Batch train;
    Batch calibration;
    Batch test;
};

// Seeded shuffle of the rows, then train = first floor(train_fraction * n);
// the held-out remainder is split again with `calibration_fraction`.
ExperimentSplits experiment_splits(const Batch& data, double train_fraction, double calibration_fraction,
                                   std::uint64_t seed);

// gamma in {0, 0.25, ..., 3}
std::vector<double> default_gamma_grid();
// lambda in {0.001, 0.01, 0.1, 1, 10}
std::vector<double> default_lambda_grid();

struct LogitInstance {
    Tensor logits;
    std::vector<Label> labels;
};

// Logits ~ N(0, 1), labels sampled from softmax(z).
LogitInstance random_logit_instance(std::size_t n, std::size_t k, std::mt19937_64& rng);

// True when the logit-matching target lies strictly between the mean-logit
// sum and the max-logit sum, i.e. a positive temperature satisfies it.
bool has_positive_temperature_root(const LogitInstance& inst);

}  // namespace nclamp
