#include "nclamp/clamping.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "nclamp/errors.hpp"

namespace nclamp {

namespace {

constexpr double kProbFloor = 1e-300;

Tensor shifted(const Tensor& x, std::span<const double> delta) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += delta[j];
    }
    return out;
}

void check_delta(const Network& net, std::span<const double> delta) {
    if (delta.size() != net.input_dim()) {
        throw DimensionError("delta has length " + std::to_string(delta.size()) + ", network input is " +
                             std::to_string(net.input_dim()));
    }
}

double squared_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

Batch subset(const Batch& b, std::span<const std::size_t> rows) {
    const std::size_t m = b.features.cols();
    std::vector<double> values;
    values.reserve(rows.size() * m);
    std::vector<Label> labels;
    labels.reserve(rows.size());
    for (std::size_t r : rows) {
        const auto src = b.features.row(r);
        values.insert(values.end(), src.begin(), src.end());
        labels.push_back(b.labels[r]);
    }
    return Batch(Tensor(rows.size(), m, std::move(values)), std::move(labels));
}

std::vector<double> resolve_bound(std::span<const double> given, std::size_t m, double fill, const char* name) {
    if (given.empty()) return std::vector<double>(m, fill);
    if (given.size() != m) throw DimensionError(std::string(name) + " bound has wrong length");
    return {given.begin(), given.end()};
}

}  // namespace

double focal_loss(std::span<const double> p, Label y, double gamma) {
    if (y >= p.size()) throw DimensionError("focal_loss: label out of range");
    if (!(gamma >= 0.0)) throw DomainError("focal_loss: gamma must be >= 0");
    const double py = p[y];
    return -std::pow(1.0 - py, gamma) * std::log(std::max(py, kProbFloor));
}

ObjectiveGrad clamp_objective_grad(const Network& net, const Batch& batch, std::span<const double> delta,
                                   double temperature, double gamma, double lambda) {
    if (!(temperature > 0.0)) throw DomainError("clamp objective: temperature must be positive");
    if (!(gamma >= 0.0) || !(lambda >= 0.0)) throw DomainError("clamp objective: gamma and lambda must be >= 0");
    check_delta(net, delta);

    const Tensor x = shifted(batch.features, delta);
    const Tensor z = forward(net, x);
    const std::size_t k_count = z.cols();
    const double log_floor = std::log(kProbFloor);

    ObjectiveGrad out;
    Tensor dz(z.rows(), k_count);
    std::vector<double> u(k_count);
    std::vector<double> logp(k_count);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto zi = z.row(i);
        const Label y = batch.labels[i];
        double top = -INFINITY;
        for (std::size_t k = 0; k < k_count; ++k) {
            u[k] = zi[k] / temperature;
            top = std::max(top, u[k]);
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < k_count; ++k) sum += std::exp(u[k] - top);
        const double lse = top + std::log(sum);
        double rest = 0.0;  // 1 - p_y, summed from the other classes to keep precision near p_y = 1
        for (std::size_t k = 0; k < k_count; ++k) {
            logp[k] = u[k] - lse;
            if (k != y) rest += std::exp(logp[k]);
        }
        const double lp = std::max(logp[y], log_floor);
        const double py = std::exp(logp[y]);
        const double modulating = std::pow(rest, gamma);
        out.value += -modulating * lp;

        // dL/du_k = c (1[k=y] - p_k) with c = gamma a^(gamma-1) p_y ln p_y - a^gamma, a = 1 - p_y.
        double c = 0.0;
        if (rest > 0.0) {
            c = gamma * std::pow(rest, gamma - 1.0) * py * lp - modulating;
        } else if (gamma == 0.0) {
            c = -1.0;
        }
        double d_t = 0.0;
        for (std::size_t k = 0; k < k_count; ++k) {
            const double du = c * ((k == y ? 1.0 : 0.0) - std::exp(logp[k]));
            dz(i, k) = du / temperature;
            d_t -= du * u[k] / temperature;
        }
        out.d_temperature += d_t;
    }

    const Tensor dx = backward_input(net, x, dz);
    out.d_delta.assign(delta.size(), 0.0);
    for (std::size_t i = 0; i < dx.rows(); ++i) {
        const auto r = dx.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) out.d_delta[j] += r[j];
    }
    for (std::size_t j = 0; j < delta.size(); ++j) out.d_delta[j] += 2.0 * lambda * delta[j];
    out.value += lambda * squared_norm(delta);
    return out;
}

double clamp_objective(const Network& net, const Batch& batch, std::span<const double> delta, double temperature,
                       double gamma, double lambda) {
    if (!(temperature > 0.0)) throw DomainError("clamp objective: temperature must be positive");
    if (!(gamma >= 0.0) || !(lambda >= 0.0)) throw DomainError("clamp objective: gamma and lambda must be >= 0");
    check_delta(net, delta);
    const Tensor probs = softmax_rows(forward(net, shifted(batch.features, delta)), temperature);
    double total = 0.0;
    for (std::size_t i = 0; i < probs.rows(); ++i) total += focal_loss(probs.row(i), batch.labels[i], gamma);
    return total + lambda * squared_norm(delta);
}

std::vector<double> random_init_delta(std::size_t m, std::uint64_t seed) {
    if (m == 0) throw DomainError("random_init_delta: m must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.1);
    std::vector<double> delta(m);
    for (auto& d : delta) d = dist(rng);
    return delta;
}

std::vector<double> box_slack(std::span<const double> g, std::span<const double> alpha, std::span<const double> beta,
                              std::span<const double> lower, std::span<const double> upper) {
    const std::size_t m = g.size();
    if (alpha.size() != m || beta.size() != m || lower.size() != m || upper.size() != m) {
        throw DimensionError("box_slack: length mismatch");
    }
    std::vector<double> eta(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        if (g[j] < 0.0) {
            eta[j] = std::max(0.0, lower[j] - alpha[j]);
        } else if (g[j] > 0.0) {
            eta[j] = std::max(0.0, beta[j] - upper[j]);
        }
    }
    return eta;
}

InitDiagnostics data_driven_init(const Network& net, const Batch& calib, double temperature,
                                 std::span<const double> alpha, std::span<const double> beta) {
    if (calib.size() == 0) throw DimensionError("data_driven_init: empty calibration set");
    const std::size_t m = net.input_dim();
    const auto a = resolve_bound(alpha, m, 0.0, "alpha");
    const auto b = resolve_bound(beta, m, 1.0, "beta");

    InitDiagnostics d;
    const Tensor grads = entropy_input_grad(net, calib.features, temperature);
    d.g.assign(m, 0.0);
    d.lower.assign(m, INFINITY);
    d.upper.assign(m, -INFINITY);
    for (std::size_t i = 0; i < calib.size(); ++i) {
        const auto gi = grads.row(i);
        const auto xi = calib.features.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            d.g[j] += gi[j];
            d.lower[j] = std::min(d.lower[j], xi[j]);
            d.upper[j] = std::max(d.upper[j], xi[j]);
        }
    }
    d.slack = box_slack(d.g, a, b, d.lower, d.upper);
    d.delta_tilde.assign(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        if (d.g[j] > 0.0) {
            d.delta_tilde[j] = d.slack[j];
        } else if (d.g[j] < 0.0) {
            d.delta_tilde[j] = -d.slack[j];
        }
    }
    return d;
}

constexpr int kMaxHalvings = 40;

ClampFit fit_neural_clamping(const Network& net, const Batch& calib, const ClampHyper& hyper, std::uint64_t seed) {
    if (!(hyper.gamma >= 0.0) || !(hyper.lambda >= 0.0)) throw DomainError("clamping: gamma and lambda must be >= 0");
    if (!(hyper.learning_rate >= 0.0)) throw DomainError("clamping: learning rate must be >= 0");
    if (hyper.batch_size == 0) throw DomainError("clamping: batch size must be >= 1");
    if (hyper.epochs < 0) throw DomainError("clamping: epochs must be >= 0");
    const std::size_t m = net.input_dim();
    const std::size_t n = calib.size();

    ClampFit fit;
    if (hyper.init == DeltaInit::zero) {
        fit.params.delta.assign(m, 0.0);
    } else if (hyper.init == DeltaInit::random) {
        fit.params.delta = random_init_delta(m, hyper.init_seed);
    } else {
        const auto a = resolve_bound(hyper.lower_bound, m, 0.0, "alpha");
        const auto b = resolve_bound(hyper.upper_bound, m, 1.0, "beta");
        for (std::size_t j = 0; j < m; ++j) {
            if (a[j] > b[j]) throw DomainError("clamping: alpha > beta in dimension " + std::to_string(j));
        }
        fit.params.delta = data_driven_init(net, calib, 1.0, a, b).delta_tilde;
    }
    auto& delta = fit.params.delta;
    double log_t = 0.0;

    const std::size_t batch_size = std::min(hyper.batch_size, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    double accepted_step = hyper.learning_rate;

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += batch_size) {
            const std::size_t end = std::min(start + batch_size, n);
            const Batch mini = subset(calib, std::span<const std::size_t>(order).subspan(start, end - start));
            const double t = std::exp(log_t);
            const ObjectiveGrad g = clamp_objective_grad(net, mini, delta, t, hyper.gamma, hyper.lambda);
            if (!std::isfinite(g.value)) {
                throw NumericalError("fit_neural_clamping: non-finite loss at epoch " + std::to_string(epoch));
            }
            double batch_loss = g.value;
            if (hyper.train_delta || hyper.train_temperature) {
                // Halve the step until the mini-batch objective does not rise. The
                // search starts from twice the last accepted step, capped at lr.
                double step = std::min(hyper.learning_rate, 2.0 * accepted_step);
                for (int tries = 0; tries < kMaxHalvings; ++tries, step *= 0.5) {
                    std::vector<double> cand = delta;
                    if (hyper.train_delta) {
                        for (std::size_t j = 0; j < m; ++j) cand[j] -= step * g.d_delta[j];
                    }
                    const double cand_log_t = hyper.train_temperature ? log_t - step * t * g.d_temperature : log_t;
                    const double value =
                        clamp_objective(net, mini, cand, std::exp(cand_log_t), hyper.gamma, hyper.lambda);
                    if (value <= g.value) {
                        delta = std::move(cand);
                        log_t = cand_log_t;
                        accepted_step = step;
                        batch_loss = value;
                        break;
                    }
                }
            }
            epoch_loss += batch_loss;
        }
        const double t = std::exp(log_t);
        if (!std::isfinite(t) || !(t > 0.0)) {
            throw NumericalError("fit_neural_clamping: temperature diverged at epoch " + std::to_string(epoch));
        }
        fit.epoch_loss.push_back(epoch_loss);
    }
    fit.params.temperature = std::exp(log_t);
    fit.final_loss = clamp_objective(net, calib, delta, fit.params.temperature, hyper.gamma, hyper.lambda);
    if (!std::isfinite(fit.final_loss)) throw NumericalError("fit_neural_clamping: non-finite final loss");
    return fit;
}

Tensor apply_clamping(const Network& net, const ClampParams& params, const Tensor& x, ClampMode mode) {
    check_delta(net, params.delta);
    const bool use_delta = mode == ClampMode::input_only || mode == ClampMode::joint;
    const bool use_t = mode == ClampMode::output_only || mode == ClampMode::joint;
    const Tensor z = forward(net, use_delta ? shifted(x, params.delta) : x);
    return softmax_rows(z, use_t ? params.temperature : 1.0);
}

SweepResult sweep_hyper(const Network& net, const Batch& calib, std::span<const double> gamma_grid,
                        std::span<const double> lambda_grid, const ClampHyper& base, std::uint64_t seed,
                        std::size_t bin_count) {
    if (gamma_grid.empty() || lambda_grid.empty()) throw DomainError("sweep_hyper: empty grid");
    const std::size_t cells = gamma_grid.size() * lambda_grid.size();
    std::vector<SweepRow> table(cells);
    std::vector<ClampParams> params(cells);
    std::vector<std::exception_ptr> failures(cells);

    const auto cell_count = static_cast<std::int64_t>(cells);
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t c = 0; c < cell_count; ++c) {
        const auto idx = static_cast<std::size_t>(c);
        try {
            ClampHyper h = base;
            h.gamma = gamma_grid[idx / lambda_grid.size()];
            h.lambda = lambda_grid[idx % lambda_grid.size()];
            ClampFit fit = fit_neural_clamping(net, calib, h, seed);
            const ProbBatch probs(apply_clamping(net, fit.params, calib.features), calib.labels);
            table[idx] = SweepRow{h.gamma, h.lambda, ece(probs, bin_count).value, mean_entropy(probs), fit.final_loss};
            params[idx] = std::move(fit.params);
        } catch (...) {
            failures[idx] = std::current_exception();
        }
    }
    for (const auto& f : failures) {
        if (f) std::rethrow_exception(f);
    }

    std::size_t best = 0;
    for (std::size_t c = 1; c < cells; ++c) {
        const SweepRow& r = table[c];
        const SweepRow& b = table[best];
        if (r.ece < b.ece || (r.ece == b.ece && (r.gamma < b.gamma || (r.gamma == b.gamma && r.lambda < b.lambda)))) {
            best = c;
        }
    }
    SweepResult out;
    out.best_gamma = table[best].gamma;
    out.best_lambda = table[best].lambda;
    out.params = params[best];
    out.table = std::move(table);
    return out;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> table) {
    const auto old_precision = out.precision(17);
    out << "gamma,lambda,ece,entropy,final_loss\n";
    for (const SweepRow& r : table) {
        out << r.gamma << ',' << r.lambda << ',' << r.ece << ',' << r.entropy << ',' << r.final_loss << '\n';
    }
    out.precision(old_precision);
}

}  // namespace nclamp
