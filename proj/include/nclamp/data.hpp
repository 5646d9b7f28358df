#pragma once

// Synthetic Gaussian-mixture data and deterministic splitting.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nclamp/calibrators.hpp"
#include "nclamp/io.hpp"
#include "nclamp/network.hpp"

namespace nclamp {

struct SyntheticSpec {
    std::size_t classes = 3;
    std::size_t dim = 8;
    std::size_t samples = 2000;
    double mean_spread = 1.0;  // std of class-mean coordinates when `means` is empty
    double cluster_std = 1.0;
    double label_noise = 0.0;  // probability a label is swapped for another class
    std::vector<std::vector<double>> means;  // optional explicit class means, K x m
};

/// Seeded mixture sample. Labels are drawn uniformly, features from the
/// class Gaussian, then every dimension is min-max rescaled into [0, 1] and
/// rounded to f32 precision so the result survives the dataset format
/// unchanged.
Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

struct SplitIndices {
    std::vector<std::size_t> first;   // floor(fraction * n) rows
    std::vector<std::size_t> second;  // the rest
};

// Seeded shuffle, then prefix split.
SplitIndices split_indices(std::size_t n, double fraction, std::uint64_t seed);

Batch take_rows(const Batch& batch, std::span<const std::size_t> rows);

LogitSet compute_logits(const Network& net, const Batch& batch);

}  // namespace nclamp
