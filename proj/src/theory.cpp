#include "nclamp/theory.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "nclamp/errors.hpp"
#include "nclamp/metrics.hpp"

namespace nclamp {

namespace {

constexpr double kTiny = std::numeric_limits<double>::min();
constexpr double kBoundaryFraction = 0.99;

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// Augmented Lagrangian of the negated entropy problem for fixed multiplier
// and penalty weight:  sum q ln q + mult * c(q) + penalty/2 * c(q)^2.
class AugmentedLagrangian {
public:
    AugmentedLagrangian(const Tensor& z, double target) : z_(z), target_(target) {}

    double constraint(const Tensor& q) const { return dot(z_.values(), q.values()) - target_; }

    double value(const Tensor& q, double mult, double penalty) const {
        double f = 0.0;
        for (double x : q.values()) {
            if (x > 0.0) f += x * std::log(x);
        }
        const double c = constraint(q);
        return f + mult * c + 0.5 * penalty * c * c;
    }

    void gradient(const Tensor& q, double mult, double penalty, Tensor& out) const {
        const double coeff = mult + penalty * constraint(q);
        auto qv = q.values();
        auto zv = z_.values();
        auto gv = out.values();
        for (std::size_t k = 0; k < qv.size(); ++k) gv[k] = std::log(std::max(qv[k], kTiny)) + 1.0 + coeff * zv[k];
    }

private:
    const Tensor& z_;
    double target_;
};

// Projection of v onto the simplex in the norm sum_k (x_k - v_k)^2 / d_k:
// x_k = max(v_k - d_k theta, 0) with theta fixing the sum at one.
void project_simplex_scaled(std::span<double> v, std::span<const double> d) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] / d[a] > v[b] / d[b]; });
    double sum_v = 0.0;
    double sum_d = 0.0;
    double theta = 0.0;
    for (std::size_t j = 0; j < order.size(); ++j) {
        sum_v += v[order[j]];
        sum_d += d[order[j]];
        const double candidate = (sum_v - 1.0) / sum_d;
        if (v[order[j]] - d[order[j]] * candidate > 0.0) theta = candidate;
    }
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = std::max(v[k] - d[k] * theta, 0.0);
}

// ||P_q(q - diag(q) grad) - q||_inf, with P_q the projection above for d = q.
// Zero exactly at KKT points with positive rows.
double projected_gradient_norm(const Tensor& q, const Tensor& grad) {
    Tensor trial = q;
    auto tv = trial.values();
    auto gv = grad.values();
    auto qv = q.values();
    for (std::size_t k = 0; k < tv.size(); ++k) tv[k] -= qv[k] * gv[k];
    for (std::size_t i = 0; i < q.rows(); ++i) project_simplex_scaled(trial.row(i), q.row(i));
    double m = 0.0;
    for (std::size_t k = 0; k < tv.size(); ++k) m = std::max(m, std::abs(tv[k] - qv[k]));
    return m;
}

struct InnerResult {
    int steps = 0;
    double stationarity = 0.0;
};

// Scaled projected gradient with metric diag(q), spectral step lengths and
// Armijo backtracking. The scaling matches the curvature of q ln q, so
// entries near zero move at the same relative rate as the rest.
InnerResult solve_inner(const AugmentedLagrangian& al, Tensor& q, double mult, double penalty, double tol,
                        int max_steps) {
    const std::size_t size = q.size();
    Tensor grad(q.rows(), q.cols());
    Tensor next(q.rows(), q.cols());
    Tensor next_grad(q.rows(), q.cols());
    Tensor dir(q.rows(), q.cols());
    al.gradient(q, mult, penalty, grad);
    // Nonmonotone line search against the worst of the last few values.
    std::array<double, 10> history;
    history.fill(al.value(q, mult, penalty));
    double bb = 1.0;

    InnerResult r;
    for (; r.steps < max_steps; ++r.steps) {
        r.stationarity = projected_gradient_norm(q, grad);
        if (r.stationarity < tol) return r;

        for (std::size_t k = 0; k < size; ++k) {
            dir.values()[k] = q.values()[k] - bb * q.values()[k] * grad.values()[k];
        }
        for (std::size_t i = 0; i < q.rows(); ++i) project_simplex_scaled(dir.row(i), q.row(i));
        for (std::size_t k = 0; k < size; ++k) dir.values()[k] -= q.values()[k];
        // Rows of dir sum to zero, so centering each gradient row leaves the
        // slope unchanged and keeps rounding from flipping its sign.
        double slope = 0.0;
        for (std::size_t i = 0; i < q.rows(); ++i) {
            const auto gi = grad.row(i);
            const auto di = dir.row(i);
            const double mean = std::accumulate(gi.begin(), gi.end(), 0.0) / static_cast<double>(gi.size());
            for (std::size_t k = 0; k < gi.size(); ++k) slope += (gi[k] - mean) * di[k];
        }
        if (!(slope < 0.0)) break;

        // Stop short of the boundary; ln q is singular there.
        double t = 1.0;
        for (std::size_t k = 0; k < size; ++k) {
            const double d = dir.values()[k];
            if (d < 0.0) t = std::min(t, -kBoundaryFraction * q.values()[k] / d);
        }
        const double reference = *std::max_element(history.begin(), history.end());
        double f_next = 0.0;
        for (int halving = 0; halving < 80; ++halving) {
            for (std::size_t k = 0; k < size; ++k) next.values()[k] = q.values()[k] + t * dir.values()[k];
            f_next = al.value(next, mult, penalty);
            // Slack for rounding once the decrease drops below machine precision.
            if (f_next <= reference + 1e-4 * t * slope + 1e-15 * std::abs(reference)) break;
            t *= 0.5;
        }
        al.gradient(next, mult, penalty, next_grad);
        double ss = 0.0;
        double sy = 0.0;
        for (std::size_t k = 0; k < size; ++k) {
            const double s = next.values()[k] - q.values()[k];
            ss += s * s / q.values()[k];
            sy += s * (next_grad.values()[k] - grad.values()[k]);
        }
        bb = sy > 0.0 ? std::clamp(ss / sy, 1e-12, 1e12) : 1e12;
        std::swap(q, next);
        std::swap(grad, next_grad);
        history[static_cast<std::size_t>(r.steps + 1) % history.size()] = f_next;
    }
    r.stationarity = projected_gradient_norm(q, grad);
    return r;
}

void fill_residuals(OracleSolution& s, const Tensor& z, double target) {
    s.constraint_residual = std::abs(dot(z.values(), s.q.values()) - target);
    s.normalization_residual = 0.0;
    double min_entry = 0.0;
    for (std::size_t i = 0; i < s.q.rows(); ++i) {
        double sum = 0.0;
        for (double x : s.q.row(i)) {
            sum += x;
            min_entry = std::min(min_entry, x);
        }
        s.normalization_residual = std::max(s.normalization_residual, std::abs(sum - 1.0));
    }
    s.nonnegativity_violation = -min_entry;
}

// Uniform over the entries of each row that attain its max (or min).
Tensor extreme_vertex(const Tensor& z, bool use_max) {
    Tensor q(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto r = z.row(i);
        const double e = use_max ? *std::max_element(r.begin(), r.end()) : *std::min_element(r.begin(), r.end());
        const auto hits = static_cast<double>(std::count(r.begin(), r.end(), e));
        for (std::size_t k = 0; k < r.size(); ++k) q(i, k) = r[k] == e ? 1.0 / hits : 0.0;
    }
    return q;
}

struct TargetRange {
    double target = 0.0;
    double lowest = 0.0;
    double highest = 0.0;
    double eps = 0.0;
};

TargetRange target_range(const Tensor& z, std::span<const Label> labels) {
    TargetRange r;
    double scale = 1.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto row = z.row(i);
        r.target += row[labels[i]];
        r.lowest += *std::min_element(row.begin(), row.end());
        r.highest += *std::max_element(row.begin(), row.end());
        scale += max_abs(row);
    }
    r.eps = 1e-12 * scale;
    return r;
}

void check_instance(const Tensor& z, std::span<const Label> labels) {
    if (z.rows() == 0 || z.cols() < 2) throw DimensionError("oracle: need n >= 1 and K >= 2");
    if (labels.size() != z.rows()) throw DimensionError("oracle: label count differs from row count");
    if (z.size() > 64) throw DomainError("oracle: n*K = " + std::to_string(z.size()) + " exceeds 64");
    for (Label y : labels) {
        if (y >= z.cols()) throw DimensionError("oracle: label out of range");
    }
}

}  // namespace

OracleSolution max_entropy_oracle(const Tensor& logits, std::span<const Label> labels, const OracleOptions& opts) {
    check_instance(logits, labels);
    const TargetRange range = target_range(logits, labels);
    const bool constant = range.highest - range.lowest <= range.eps;
    if (range.target > range.highest + range.eps || range.target < range.lowest - range.eps) {
        std::ostringstream msg;
        msg.precision(17);
        msg << "oracle: infeasible, target " << range.target << " outside [" << range.lowest << ", " << range.highest
            << "]";
        throw DomainError(msg.str());
    }

    OracleSolution s;
    if (!constant && (std::abs(range.target - range.highest) <= range.eps ||
                      std::abs(range.target - range.lowest) <= range.eps)) {
        // Only the extreme vertices (and mixtures over tied extremes) are feasible.
        s.q = extreme_vertex(logits, std::abs(range.target - range.highest) <= range.eps);
        s.boundary = true;
        fill_residuals(s, logits, range.target);
        return s;
    }

    s.q = Tensor(logits.rows(), logits.cols());
    for (double& x : s.q.values()) x = 1.0 / static_cast<double>(logits.cols());

    const AugmentedLagrangian al(logits, range.target);
    double mult = 0.0;
    double penalty = opts.initial_penalty;
    for (int outer = 0; outer < opts.outer_max; ++outer) {
        const InnerResult inner = solve_inner(al, s.q, mult, penalty, 0.1 * opts.tol, opts.inner_max);
        s.iterations += inner.steps;
        s.outer_rounds = outer + 1;
        mult += penalty * al.constraint(s.q);
        s.stationarity = inner.stationarity;
        fill_residuals(s, logits, range.target);
        if (s.constraint_residual < opts.tol && s.stationarity < opts.tol) return s;
        penalty *= opts.penalty_growth;
    }
    std::ostringstream msg;
    msg << "oracle: no convergence after " << opts.outer_max << " rounds (constraint residual "
        << s.constraint_residual << ", stationarity " << s.stationarity << ")";
    throw NumericalError(msg.str());
}

double logit_match_gap(const Tensor& logits, std::span<const Label> labels, double temperature) {
    double total = 0.0;
    std::vector<double> p(logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto z = logits.row(i);
        softmax_T(z, temperature, p);
        total += dot(z, p) - z[labels[i]];
    }
    return total;
}

Lemma1Report verify_lemma1(const Tensor& logits, std::span<const Label> labels, const OracleOptions& opts) {
    check_instance(logits, labels);
    constexpr double kLogLo = -9.210340371976182;  // ln 1e-4
    constexpr double kLogHi = 9.210340371976182;   // ln 1e4

    Lemma1Report rep;
    const TargetRange range = target_range(logits, labels);
    if (range.highest - range.lowest <= range.eps) {
        rep.degenerate = true;
        rep.temperature = 1.0;
        rep.note = "constant logits: every temperature satisfies the constraint";
    } else {
        const double gap_lo = logit_match_gap(logits, labels, std::exp(kLogLo));
        const double gap_hi = logit_match_gap(logits, labels, std::exp(kLogHi));
        std::ostringstream cert;
        cert.precision(17);
        if (gap_lo <= 0.0) {
            rep.boundary = true;
            rep.temperature = std::exp(kLogLo);
            cert << "no root: gap(T=1e-4) = " << gap_lo << " <= 0; target at the top of the attainable range";
        } else if (gap_hi >= 0.0) {
            rep.boundary = true;
            rep.temperature = std::exp(kLogHi);
            cert << "no root: gap(T=1e4) = " << gap_hi
                 << " >= 0; target at or below the mean-logit sum, needs a non-positive temperature";
        } else {
            double lo = kLogLo;
            double hi = kLogHi;
            while (hi - lo > 1e-10) {
                const double mid = 0.5 * (lo + hi);
                if (logit_match_gap(logits, labels, std::exp(mid)) > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            rep.root_found = true;
            rep.temperature = std::exp(0.5 * (lo + hi));
        }
        rep.note = cert.str();
    }

    OracleSolution sol;
    try {
        sol = max_entropy_oracle(logits, labels, opts);
    } catch (const std::exception& e) {
        rep.note += rep.note.empty() ? e.what() : std::string("; ") + e.what();
        rep.max_deviation = INFINITY;
        return rep;
    }
    rep.iterations = sol.iterations;
    rep.constraint_residual = sol.constraint_residual;
    rep.normalization_residual = sol.normalization_residual;
    rep.nonnegativity_violation = sol.nonnegativity_violation;

    std::vector<double> p(logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        softmax_T(logits.row(i), rep.temperature, p);
        for (std::size_t k = 0; k < p.size(); ++k) rep.max_deviation = std::max(rep.max_deviation, std::abs(sol.q(i, k) - p[k]));
    }
    const bool solvable = rep.root_found || rep.degenerate || (rep.boundary && sol.boundary);
    rep.passed = solvable && rep.max_deviation < 10.0 * opts.tol && rep.constraint_residual < opts.tol &&
                 rep.normalization_residual < opts.tol && rep.nonnegativity_violation < opts.tol;
    return rep;
}

std::vector<double> FirstOrderReport::gap_ratios() const {
    std::vector<double> out;
    for (std::size_t k = 1; k < rows.size(); ++k) {
        out.push_back(rows[k - 1].gap > 0.0 ? rows[k].gap / rows[k - 1].gap : NAN);
    }
    return out;
}

FirstOrderReport first_order_check(const Network& net, const Batch& calib, std::span<const double> direction,
                                   double temperature, std::span<const double> scales) {
    if (direction.size() != net.input_dim()) throw DimensionError("first_order_check: direction length != input dim");
    for (std::size_t k = 0; k < scales.size(); ++k) {
        if (!(scales[k] >= 0.0)) throw DomainError("first_order_check: scales must be non-negative");
        if (k > 0 && scales[k] > scales[k - 1]) throw DomainError("first_order_check: scales must be descending");
    }
    const Tensor base_probs = softmax_rows(forward(net, calib.features), temperature);
    const Tensor grads = entropy_input_grad(net, calib.features, temperature);
    double slope = 0.0;  // delta^T g with g summed over samples
    for (std::size_t i = 0; i < grads.rows(); ++i) slope += dot(grads.row(i), direction);

    FirstOrderReport rep;
    for (double s : scales) {
        Tensor x = calib.features;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            auto r = x.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) r[j] += s * direction[j];
        }
        const Tensor probs = softmax_rows(forward(net, x), temperature);
        double measured = 0.0;
        for (std::size_t i = 0; i < probs.rows(); ++i) measured += entropy(probs.row(i)) - entropy(base_probs.row(i));
        const double predicted = s * slope;
        rep.rows.push_back({s, predicted, measured, std::abs(measured - predicted)});
    }
    return rep;
}

std::vector<double> bruteforce_box_argmax(std::span<const double> g, std::span<const double> alpha,
                                          std::span<const double> beta, std::span<const double> lower,
                                          std::span<const double> upper) {
    const std::size_t m = g.size();
    if (alpha.size() != m || beta.size() != m || lower.size() != m || upper.size() != m) {
        throw DimensionError("bruteforce_box_argmax: length mismatch");
    }
    if (m > 10) throw DomainError("bruteforce_box_argmax: m = " + std::to_string(m) + " exceeds 10");

    std::vector<std::array<double, 3>> choices(m);
    for (std::size_t j = 0; j < m; ++j) {
        choices[j] = {0.0, -std::max(0.0, lower[j] - alpha[j]), std::max(0.0, beta[j] - upper[j])};
    }
    std::vector<int> digit(m, 0);
    std::vector<double> candidate(m, 0.0);
    std::vector<double> best(m, 0.0);
    double best_value = 0.0;
    bool first = true;
    while (true) {
        for (std::size_t j = 0; j < m; ++j) candidate[j] = choices[j][static_cast<std::size_t>(digit[j])];
        const double value = dot(candidate, g);
        if (first || value > best_value) {
            best_value = value;
            best = candidate;
            first = false;
        }
        std::size_t j = 0;
        while (j < m && digit[j] == 2) digit[j++] = 0;
        if (j == m) break;
        ++digit[j];
    }
    return best;
}

}  // namespace nclamp
