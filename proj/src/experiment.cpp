#include "nclamp/experiment.hpp"

#include <algorithm>

#include "nclamp/data.hpp"
#include "nclamp/metrics.hpp"

namespace nclamp {

ExperimentSplits experiment_splits(const Batch& data, double train_fraction, double calibration_fraction,
                                   std::uint64_t seed) {
    const SplitIndices outer = split_indices(data.size(), train_fraction, seed);
    const Batch held_out = take_rows(data, outer.second);
    const SplitIndices inner = split_indices(held_out.size(), calibration_fraction, seed + 1);
    return ExperimentSplits{take_rows(data, outer.first), take_rows(held_out, inner.first),
                            take_rows(held_out, inner.second)};
}

std::vector<double> default_gamma_grid() {
    std::vector<double> g;
    for (int k = 0; k <= 12; ++k) g.push_back(0.25 * k);
    return g;
}

std::vector<double> default_lambda_grid() { return {0.001, 0.01, 0.1, 1.0, 10.0}; }

LogitInstance random_logit_instance(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::normal_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    LogitInstance inst{Tensor(n, k), std::vector<Label>(n)};
    for (double& v : inst.logits.values()) v = unit(rng);
    for (std::size_t i = 0; i < n; ++i) {
        const auto p = softmax_T(inst.logits.row(i), 1.0);
        const double r = u01(rng);
        double acc = 0.0;
        std::size_t y = k - 1;
        for (std::size_t c = 0; c < k; ++c) {
            acc += p[c];
            if (r < acc) {
                y = c;
                break;
            }
        }
        inst.labels[i] = static_cast<Label>(y);
    }
    return inst;
}

bool has_positive_temperature_root(const LogitInstance& inst) {
    double target = 0.0;
    double mean_sum = 0.0;
    double max_sum = 0.0;
    for (std::size_t i = 0; i < inst.logits.rows(); ++i) {
        const auto row = inst.logits.row(i);
        target += row[inst.labels[i]];
        double s = 0.0;
        for (double v : row) s += v;
        mean_sum += s / static_cast<double>(row.size());
        max_sum += *std::max_element(row.begin(), row.end());
    }
    return target > mean_sum && target < max_sum;
}

}  // namespace nclamp
