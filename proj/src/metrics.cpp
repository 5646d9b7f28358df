#include "nclamp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include "nclamp/errors.hpp"

namespace nclamp {

namespace {

constexpr double kProbFloor = 1e-300;

double bin_edge(std::size_t i, std::size_t bin_count) {
    return static_cast<double>(i) / static_cast<double>(bin_count);
}

void check_bins(std::size_t bin_count, const char* what) {
    if (bin_count == 0) throw DomainError(std::string(what) + ": bin count must be >= 1");
}

struct BinAccumulator {
    std::vector<std::size_t> count;
    std::vector<double> hits;
    std::vector<double> conf;

    explicit BinAccumulator(std::size_t bins) : count(bins, 0), hits(bins, 0.0), conf(bins, 0.0) {}

    void add(double confidence, bool hit, std::size_t bin_count) {
        const std::size_t b = bin_index(confidence, bin_count);
        ++count[b];
        hits[b] += hit ? 1.0 : 0.0;
        conf[b] += confidence;
    }

    // sum_b |B_b|/n |acc_b - conf_b|
    double weighted_gap(std::size_t n) const {
        double total = 0.0;
        for (std::size_t b = 0; b < count.size(); ++b) {
            if (count[b] == 0) continue;
            const double c = static_cast<double>(count[b]);
            total += c / static_cast<double>(n) * std::abs(hits[b] / c - conf[b] / c);
        }
        return total;
    }
};

}  // namespace

void softmax_T(std::span<const double> z, double temperature, std::span<double> out) {
    if (!(temperature > 0.0)) throw DomainError("softmax: temperature must be positive");
    if (out.size() != z.size()) throw DimensionError("softmax: output size mismatch");
    double top = -INFINITY;
    for (std::size_t k = 0; k < z.size(); ++k) {
        out[k] = z[k] / temperature;
        top = std::max(top, out[k]);
    }
    double sum = 0.0;
    for (double& v : out) {
        v = std::exp(v - top);
        sum += v;
    }
    for (double& v : out) v /= sum;
}

std::vector<double> softmax_T(std::span<const double> z, double temperature) {
    std::vector<double> out(z.size());
    softmax_T(z, temperature, out);
    return out;
}

Tensor softmax_rows(const Tensor& logits, double temperature) {
    Tensor p(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) softmax_T(logits.row(i), temperature, p.row(i));
    return p;
}

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k) {
        if (v[k] > v[best]) best = k;
    }
    return best;
}

ProbBatch::ProbBatch(Tensor probs, std::vector<Label> labels) : probs_(std::move(probs)), labels_(std::move(labels)) {
    if (labels_.empty()) throw DimensionError("prob batch: no rows");
    if (probs_.rows() != labels_.size()) throw DimensionError("prob batch: label count differs from row count");
    if (probs_.cols() < 2) throw DimensionError("prob batch: need at least 2 classes");
    for (std::size_t i = 0; i < probs_.rows(); ++i) {
        double sum = 0.0;
        for (double v : probs_.row(i)) {
            if (!(v >= 0.0)) throw DomainError("prob batch: negative probability in row " + std::to_string(i));
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw DomainError("prob batch: row " + std::to_string(i) + " sums to " + std::to_string(sum));
        }
        if (labels_[i] >= probs_.cols()) throw DimensionError("prob batch: label out of range in row " + std::to_string(i));
    }
}

std::size_t bin_index(double confidence, std::size_t bin_count) {
    const auto last = bin_count - 1;
    const double scaled = std::ceil(confidence * static_cast<double>(bin_count)) - 1.0;
    std::size_t idx = scaled <= 0.0 ? 0 : std::min(static_cast<std::size_t>(scaled), last);
    // Settle rounding at the edges so membership is exactly lower < c <= upper.
    while (idx > 0 && confidence <= bin_edge(idx, bin_count)) --idx;
    while (idx < last && confidence > bin_edge(idx + 1, bin_count)) ++idx;
    return idx;
}

double mean_entropy(const ProbBatch& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += entropy(p.probs().row(i));
    return total / static_cast<double>(p.size());
}

EceResult ece(const ProbBatch& p, std::size_t bin_count) {
    check_bins(bin_count, "ece");
    BinAccumulator acc(bin_count);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto row = p.probs().row(i);
        const std::size_t pred = argmax(row);
        acc.add(row[pred], pred == p.labels()[i], bin_count);
    }
    EceResult result;
    result.value = acc.weighted_gap(p.size());
    result.report.bins.resize(bin_count);
    for (std::size_t b = 0; b < bin_count; ++b) {
        Bin& bin = result.report.bins[b];
        bin.index = b;
        bin.lower = bin_edge(b, bin_count);
        bin.upper = bin_edge(b + 1, bin_count);
        bin.count = acc.count[b];
        if (bin.count > 0) {
            bin.accuracy = acc.hits[b] / static_cast<double>(bin.count);
            bin.confidence = acc.conf[b] / static_cast<double>(bin.count);
        }
    }
    return result;
}

double sce(const ProbBatch& p, std::size_t bin_count) {
    check_bins(bin_count, "sce");
    const std::size_t k_count = p.class_count();
    double total = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
        BinAccumulator acc(bin_count);
        for (std::size_t i = 0; i < p.size(); ++i) acc.add(p.probs()(i, k), p.labels()[i] == k, bin_count);
        total += acc.weighted_gap(p.size());
    }
    return total / static_cast<double>(k_count);
}

double ace(const ProbBatch& p, std::size_t range_count) {
    const std::size_t n = p.size();
    if (range_count == 0 || range_count > n) {
        throw DomainError("ace: range count " + std::to_string(range_count) + " outside [1, " + std::to_string(n) + "]");
    }
    const std::size_t k_count = p.class_count();
    const std::size_t width = n / range_count;
    std::vector<std::size_t> order(n);
    double total = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return p.probs()(a, k) < p.probs()(b, k); });
        for (std::size_t r = 0; r < range_count; ++r) {
            const std::size_t begin = r * width;
            const std::size_t end = r + 1 == range_count ? n : begin + width;
            double hits = 0.0;
            double conf = 0.0;
            for (std::size_t j = begin; j < end; ++j) {
                hits += p.labels()[order[j]] == k ? 1.0 : 0.0;
                conf += p.probs()(order[j], k);
            }
            const double c = static_cast<double>(end - begin);
            total += std::abs(hits / c - conf / c);
        }
    }
    return total / static_cast<double>(k_count * range_count);
}

double nll(const ProbBatch& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total -= std::log(std::max(p.probs()(i, p.labels()[i]), kProbFloor));
    return total;
}

double accuracy(const ProbBatch& p) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < p.size(); ++i) hits += argmax(p.probs().row(i)) == p.labels()[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(p.size());
}

MetricReport evaluate_metrics(const ProbBatch& p, std::size_t bin_count, std::size_t range_count) {
    MetricReport r;
    r.accuracy = accuracy(p);
    r.mean_entropy = mean_entropy(p);
    r.ece = ece(p, bin_count).value;
    r.ace = ace(p, std::min(range_count, p.size()));
    r.sce = sce(p, bin_count);
    r.nll = nll(p);
    r.bins = bin_count;
    r.ranges = range_count;
    return r;
}

void write_reliability_csv(std::ostream& out, const BinReport& report) {
    const auto old_precision = out.precision(17);
    out << "bin_lower,bin_upper,count,accuracy,confidence\n";
    for (const Bin& b : report.bins) {
        out << b.lower << ',' << b.upper << ',' << b.count << ',' << b.accuracy << ',' << b.confidence << '\n';
    }
    out.precision(old_precision);
}

}  // namespace nclamp
