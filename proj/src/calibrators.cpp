#include "nclamp/calibrators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nclamp/errors.hpp"

namespace nclamp {

namespace {

struct ScalarObjective {
    double value = 0.0;
    double grad = 0.0;
};

// Summed NLL of softmax(Z e^{-u}) and its derivative in u = ln T.
ScalarObjective temperature_nll(const LogitSet& data, double log_t) {
    const double s = std::exp(-log_t);
    ScalarObjective out;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto z = data.logits.row(i);
        double top = -INFINITY;
        for (double v : z) top = std::max(top, v * s);
        double sum = 0.0;
        double weighted = 0.0;
        for (double v : z) {
            const double e = std::exp(v * s - top);
            sum += e;
            weighted += e * v;
        }
        const double zy = z[data.labels[i]];
        out.value += top + std::log(sum) - zy * s;
        // d/du = s (z_y - E_p[z])
        out.grad += s * (zy - weighted / sum);
    }
    return out;
}

void check_config(const FitConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw DomainError("fit config: learning_rate must be positive");
    if (cfg.epochs < 0) throw DomainError("fit config: epochs must be >= 0");
}

// Applies u = W x + b to every row of `inputs` and writes softmax(u) into probs.
void linear_softmax(const Tensor& inputs, const Tensor& weight, std::span<const double> bias, Tensor& probs) {
    const std::size_t k_count = inputs.cols();
    std::vector<double> u(k_count);
    for (std::size_t i = 0; i < inputs.rows(); ++i) {
        const auto x = inputs.row(i);
        for (std::size_t r = 0; r < k_count; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < k_count; ++c) acc += weight(r, c) * x[c];
            u[r] = acc + bias[r];
        }
        softmax_T(u, 1.0, probs.row(i));
    }
}

LinearCalib fit_linear(const Tensor& inputs, std::span<const Label> labels, CalibFamily family,
                       std::optional<double> odir_lambda, const FitConfig& cfg) {
    check_config(cfg);
    const std::size_t n = inputs.rows();
    const std::size_t k_count = inputs.cols();
    LinearCalib calib = LinearCalib::identity(family, k_count);
    const bool diagonal = family == CalibFamily::vector;
    const double inv_n = 1.0 / static_cast<double>(n);

    // The quadratic ODIR term is handled by its proximal map, which keeps the
    // iteration stable for every lambda at a fixed learning rate.
    double offdiag_shrink = 1.0;
    double bias_shrink = 1.0;
    if (odir_lambda) {
        if (*odir_lambda < 0.0) throw DomainError("odir lambda must be >= 0");
        const double kk = static_cast<double>(k_count);
        offdiag_shrink = 1.0 / (1.0 + 2.0 * cfg.learning_rate * *odir_lambda / (kk * (kk - 1.0)));
        bias_shrink = 1.0 / (1.0 + 2.0 * cfg.learning_rate * *odir_lambda / kk);
    }

    Tensor probs(n, k_count);
    Tensor d_weight(k_count, k_count);
    std::vector<double> d_bias(k_count);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        linear_softmax(inputs, calib.weight, calib.bias, probs);
        std::fill(d_weight.values().begin(), d_weight.values().end(), 0.0);
        std::fill(d_bias.begin(), d_bias.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto x = inputs.row(i);
            for (std::size_t r = 0; r < k_count; ++r) {
                const double g = (probs(i, r) - (labels[i] == r ? 1.0 : 0.0)) * inv_n;
                d_bias[r] += g;
                if (diagonal) {
                    d_weight(r, r) += g * x[r];
                } else {
                    for (std::size_t c = 0; c < k_count; ++c) d_weight(r, c) += g * x[c];
                }
            }
        }
        for (std::size_t r = 0; r < k_count; ++r) {
            for (std::size_t c = 0; c < k_count; ++c) {
                if (diagonal && r != c) continue;
                double w = calib.weight(r, c) - cfg.learning_rate * d_weight(r, c);
                if (r != c) w *= offdiag_shrink;
                calib.weight(r, c) = w;
            }
            calib.bias[r] = (calib.bias[r] - cfg.learning_rate * d_bias[r]) * bias_shrink;
        }
    }
    calib.weight.check_finite("linear scaling fit");
    for (double b : calib.bias) {
        if (!std::isfinite(b)) throw NumericalError("linear scaling fit: non-finite bias");
    }
    return calib;
}

OdirFit select_odir(const LogitSet& data, const Tensor& inputs, CalibFamily family, const FitConfig& cfg,
                    std::size_t bin_count) {
    if (cfg.odir_lambdas.empty()) throw DomainError("odir: empty lambda list");
    OdirFit best;
    bool have = false;
    for (double lambda : cfg.odir_lambdas) {
        LinearCalib calib = fit_linear(inputs, data.labels, CalibFamily::matrix, lambda, cfg);
        calib.family = family;
        const double e = ece(apply_output_calibrator(calib, data), bin_count).value;
        if (!have || e < best.calibration_ece) {
            best = OdirFit{std::move(calib), lambda, e};
            have = true;
        }
    }
    return best;
}

}  // namespace

LogitSet::LogitSet(Tensor z, std::vector<Label> y) : logits(std::move(z)), labels(std::move(y)) {
    if (labels.empty()) throw DimensionError("logit set: no rows");
    if (logits.rows() != labels.size()) throw DimensionError("logit set: label count differs from row count");
    if (logits.cols() < 2) throw DimensionError("logit set: need at least 2 classes");
    for (Label l : labels) {
        if (l >= logits.cols()) throw DimensionError("logit set: label " + std::to_string(l) + " out of range");
    }
    logits.check_finite("logit set");
}

std::string_view family_name(CalibFamily family) {
    switch (family) {
        case CalibFamily::temperature: return "temperature";
        case CalibFamily::vector: return "vector";
        case CalibFamily::matrix: return "matrix";
        case CalibFamily::dirichlet: return "dirichlet";
    }
    return "temperature";
}

CalibFamily parse_family(std::string_view name) {
    for (auto f : {CalibFamily::temperature, CalibFamily::vector, CalibFamily::matrix, CalibFamily::dirichlet}) {
        if (family_name(f) == name) return f;
    }
    throw SchemaError("unknown calibrator family '" + std::string(name) + "'");
}

LinearCalib LinearCalib::with_temperature(double t) {
    if (!(t > 0.0)) throw DomainError("temperature must be positive");
    LinearCalib c;
    c.temperature = t;
    return c;
}

LinearCalib LinearCalib::identity(CalibFamily family, std::size_t class_count) {
    LinearCalib c;
    c.family = family;
    if (family == CalibFamily::temperature) return c;
    c.weight = Tensor(class_count, class_count);
    for (std::size_t k = 0; k < class_count; ++k) c.weight(k, k) = 1.0;
    c.bias.assign(class_count, 0.0);
    return c;
}

LinearCalib fit_temperature_nll(const LogitSet& data, const FitConfig& cfg, std::vector<double>* loss_trace) {
    check_config(cfg);
    double log_t = 0.0;
    double step = cfg.learning_rate;
    ScalarObjective cur = temperature_nll(data, log_t);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (loss_trace) loss_trace->push_back(cur.value);
        if (cur.grad == 0.0) continue;
        // Shrink the step whenever it would raise the objective; the summed
        // NLL curvature grows with n and can exceed 2/learning_rate.
        double cand_t = log_t - step * cur.grad;
        ScalarObjective cand = temperature_nll(data, cand_t);
        int halvings = 0;
        while (!(cand.value <= cur.value) && halvings < 60) {
            step *= 0.5;
            cand_t = log_t - step * cur.grad;
            cand = temperature_nll(data, cand_t);
            ++halvings;
        }
        if (!(cand.value <= cur.value)) break;
        log_t = cand_t;
        cur = cand;
    }
    if (loss_trace) loss_trace->push_back(cur.value);
    const double t = std::exp(log_t);
    if (!std::isfinite(t) || !(t > 0.0)) throw NumericalError("fit_temperature_nll: temperature left (0, inf)");
    return LinearCalib::with_temperature(t);
}

LinearCalib fit_temperature_grid(const LogitSet& data, std::span<const double> grid, std::size_t bin_count) {
    if (grid.empty()) throw DomainError("fit_temperature_grid: empty grid");
    double best_t = 0.0;
    double best_ece = INFINITY;
    for (double t : grid) {
        if (!(t > 0.0)) throw DomainError("fit_temperature_grid: grid point " + std::to_string(t) + " is not positive");
        const double e = ece(ProbBatch(softmax_rows(data.logits, t), data.labels), bin_count).value;
        if (e < best_ece || (e == best_ece && t < best_t)) {
            best_ece = e;
            best_t = t;
        }
    }
    return LinearCalib::with_temperature(best_t);
}

LinearCalib fit_temperature_grid(const LogitSet& data, double lo, double hi, double step, std::size_t bin_count) {
    if (!(lo >= 0.0) || !(hi > lo) || !(step > 0.0)) {
        throw DomainError("fit_temperature_grid: need 0 <= lo < hi and step > 0");
    }
    const auto points = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
    if (points == 0) throw DomainError("fit_temperature_grid: empty grid");
    std::vector<double> grid(points);
    for (std::size_t k = 0; k < points; ++k) grid[k] = lo + static_cast<double>(k + 1) * step;
    return fit_temperature_grid(data, grid, bin_count);
}

LinearCalib fit_linear_scaling(const LogitSet& data, CalibFamily family, std::optional<double> odir_lambda,
                               const FitConfig& cfg) {
    if (family != CalibFamily::vector && family != CalibFamily::matrix) {
        throw DomainError("fit_linear_scaling: family must be vector or matrix");
    }
    return fit_linear(data.logits, data.labels, family, odir_lambda, cfg);
}

OdirFit fit_ms_odir(const LogitSet& data, const FitConfig& cfg, std::size_t bin_count) {
    return select_odir(data, data.logits, CalibFamily::matrix, cfg, bin_count);
}

OdirFit fit_dirichlet(const LogitSet& data, const FitConfig& cfg, std::size_t bin_count) {
    return select_odir(data, log_softmax_rows(data.logits), CalibFamily::dirichlet, cfg, bin_count);
}

double odir_penalty(const Tensor& weight, std::span<const double> bias) {
    const std::size_t k_count = weight.rows();
    if (weight.cols() != k_count) throw DimensionError("odir_penalty: W is not square");
    if (bias.size() != k_count) throw DimensionError("odir_penalty: bias length differs from K");
    if (k_count < 2) throw DimensionError("odir_penalty: need K >= 2");
    double off = 0.0;
    for (std::size_t j = 0; j < k_count; ++j) {
        for (std::size_t k = 0; k < k_count; ++k) {
            if (j != k) off += weight(j, k) * weight(j, k);
        }
    }
    double inter = 0.0;
    for (double b : bias) inter += b * b;
    const double kk = static_cast<double>(k_count);
    return off / (kk * (kk - 1.0)) + inter / kk;
}

Tensor log_softmax_rows(const Tensor& logits) {
    Tensor out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto z = logits.row(i);
        double top = -INFINITY;
        for (double v : z) top = std::max(top, v);
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - top);
        const double lse = top + std::log(sum);
        for (std::size_t k = 0; k < z.size(); ++k) out(i, k) = z[k] - lse;
    }
    return out;
}

Tensor calibrated_probs(const LinearCalib& calib, const Tensor& logits) {
    if (calib.family == CalibFamily::temperature) return softmax_rows(logits, calib.temperature);
    const std::size_t k_count = logits.cols();
    if (calib.weight.rows() != k_count || calib.weight.cols() != k_count || calib.bias.size() != k_count) {
        throw DimensionError("calibrator is " + std::to_string(calib.bias.size()) + "-class, logits have " +
                             std::to_string(k_count) + " columns");
    }
    Tensor probs(logits.rows(), k_count);
    if (calib.family == CalibFamily::dirichlet) {
        linear_softmax(log_softmax_rows(logits), calib.weight, calib.bias, probs);
    } else {
        linear_softmax(logits, calib.weight, calib.bias, probs);
    }
    return probs;
}

ProbBatch apply_output_calibrator(const LinearCalib& calib, const LogitSet& data) {
    return ProbBatch(calibrated_probs(calib, data.logits), data.labels);
}

}  // namespace nclamp
