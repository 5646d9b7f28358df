#include "nclamp/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "nclamp/errors.hpp"

namespace nclamp {

Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    const std::size_t k = spec.classes;
    const std::size_t m = spec.dim;
    const std::size_t n = spec.samples;
    if (k < 2) throw DomainError("synthetic: need at least 2 classes");
    if (m == 0) throw DomainError("synthetic: dim must be positive");
    if (n < k) throw DomainError("synthetic: samples must be >= classes");
    if (!(spec.cluster_std >= 0.0) || !(spec.mean_spread >= 0.0)) throw DomainError("synthetic: negative scale");
    if (!(spec.label_noise >= 0.0 && spec.label_noise <= 1.0)) throw DomainError("synthetic: label_noise outside [0,1]");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);

    std::vector<std::vector<double>> means = spec.means;
    if (means.empty()) {
        means.assign(k, std::vector<double>(m));
        for (auto& mu : means) {
            for (auto& v : mu) v = spec.mean_spread * unit(rng);
        }
    } else if (means.size() != k || std::any_of(means.begin(), means.end(), [&](const auto& v) { return v.size() != m; })) {
        throw DimensionError("synthetic: means must be classes x dim");
    }

    std::uniform_int_distribution<std::size_t> pick_class(0, k - 1);
    std::uniform_int_distribution<std::size_t> pick_other(0, k - 2);
    std::bernoulli_distribution flip(spec.label_noise);

    std::vector<double> x(n * m);
    std::vector<Label> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = pick_class(rng);
        for (std::size_t j = 0; j < m; ++j) x[i * m + j] = means[c][j] + spec.cluster_std * unit(rng);
        std::size_t y = c;
        if (flip(rng)) {
            const std::size_t o = pick_other(rng);
            y = o >= c ? o + 1 : o;
        }
        labels[i] = static_cast<Label>(y);
    }

    for (std::size_t j = 0; j < m; ++j) {
        double lo = INFINITY;
        double hi = -INFINITY;
        for (std::size_t i = 0; i < n; ++i) {
            lo = std::min(lo, x[i * m + j]);
            hi = std::max(hi, x[i * m + j]);
        }
        const double span = hi - lo;
        for (std::size_t i = 0; i < n; ++i) {
            const double scaled = span > 0.0 ? (x[i * m + j] - lo) / span : 0.5;
            x[i * m + j] = static_cast<double>(static_cast<float>(scaled));
        }
    }
    return Dataset{Batch(Tensor(n, m, std::move(x)), std::move(labels)), k};
}

SplitIndices split_indices(std::size_t n, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw DomainError("split fraction must lie in (0, 1)");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto cut = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    if (cut == 0 || cut == n) throw DomainError("split leaves one side empty");
    SplitIndices s;
    s.first.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
    s.second.assign(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
    return s;
}

Batch take_rows(const Batch& batch, std::span<const std::size_t> rows) {
    const std::size_t m = batch.features.cols();
    std::vector<double> values;
    values.reserve(rows.size() * m);
    std::vector<Label> labels;
    labels.reserve(rows.size());
    for (std::size_t r : rows) {
        if (r >= batch.size()) throw DimensionError("take_rows: row " + std::to_string(r) + " out of range");
        const auto src = batch.features.row(r);
        values.insert(values.end(), src.begin(), src.end());
        labels.push_back(batch.labels[r]);
    }
    return Batch(Tensor(rows.size(), m, std::move(values)), std::move(labels));
}

LogitSet compute_logits(const Network& net, const Batch& batch) {
    return LogitSet(forward(net, batch.features), batch.labels);
}

}  // namespace nclamp
