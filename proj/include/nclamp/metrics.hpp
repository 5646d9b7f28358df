#pragma once

// Calibration and performance metrics over predicted class distributions.
//
// Confidence bins are equal-width, left-open and right-closed over (0, 1]:
// bin i of M covers (i/M, (i+1)/M], and a confidence of exactly 0 falls in
// bin 0. A value sitting on an edge belongs to the lower bin.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "nclamp/network.hpp"
#include "nclamp/tensor.hpp"

namespace nclamp {

inline constexpr std::size_t kDefaultBins = 15;
inline constexpr std::size_t kDefaultRanges = 15;

std::vector<double> softmax_T(std::span<const double> z, double temperature);
void softmax_T(std::span<const double> z, double temperature, std::span<double> out);

// Row-wise softmax of z/T.
Tensor softmax_rows(const Tensor& logits, double temperature);

// -sum p ln p with 0 ln 0 = 0.
double entropy(std::span<const double> p);

/// Rows of class probabilities with their labels. Construction checks that
/// entries are non-negative, rows sum to 1 within 1e-9, and labels < K.
class ProbBatch {
public:
    ProbBatch(Tensor probs, std::vector<Label> labels);

    const Tensor& probs() const noexcept { return probs_; }
    const std::vector<Label>& labels() const noexcept { return labels_; }
    std::size_t size() const noexcept { return labels_.size(); }
    std::size_t class_count() const noexcept { return probs_.cols(); }

private:
    Tensor probs_;
    std::vector<Label> labels_;
};

struct Bin {
    std::size_t index = 0;
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    double accuracy = 0.0;    // 0 for empty bins
    double confidence = 0.0;  // 0 for empty bins
};

struct BinReport {
    std::vector<Bin> bins;
};

struct EceResult {
    double value = 0.0;
    BinReport report;
};

struct MetricReport {
    double accuracy = 0.0;
    double mean_entropy = 0.0;
    double ece = 0.0;
    double ace = 0.0;
    double sce = 0.0;
    double nll = 0.0;
    std::size_t bins = kDefaultBins;
    std::size_t ranges = kDefaultRanges;
};

// Index of the (0,1] bin holding `confidence`, following the edge rule above.
std::size_t bin_index(double confidence, std::size_t bin_count);

double mean_entropy(const ProbBatch& p);
EceResult ece(const ProbBatch& p, std::size_t bin_count = kDefaultBins);
double sce(const ProbBatch& p, std::size_t bin_count = kDefaultBins);
double ace(const ProbBatch& p, std::size_t range_count = kDefaultRanges);
// Summed over rows; probabilities are floored at 1e-300.
double nll(const ProbBatch& p);
// Argmax ties go to the lowest class index.
double accuracy(const ProbBatch& p);

std::size_t argmax(std::span<const double> v);

MetricReport evaluate_metrics(const ProbBatch& p, std::size_t bin_count = kDefaultBins,
                              std::size_t range_count = kDefaultRanges);

// CSV with header bin_lower,bin_upper,count,accuracy,confidence.
void write_reliability_csv(std::ostream& out, const BinReport& report);

}  // namespace nclamp
