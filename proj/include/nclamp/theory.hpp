#pragma once

// Numerical checks of two results about joint input/output calibration:
//
//  * Among per-sample distributions q_i whose expected logit sum matches the
//    observed true-class logit sum, entropy is maximized by softmax(z/T) for
//    a single T. `max_entropy_oracle` solves that constrained problem
//    directly; `verify_lemma1` compares it with the softmax family.
//  * To first order an input shift delta raises the summed output entropy by
//    delta^T g, and the best shift inside the data box is sign(g) * slack.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nclamp/network.hpp"
#include "nclamp/tensor.hpp"

namespace nclamp {

struct OracleOptions {
    double tol = 1e-8;
    int outer_max = 20;
    int inner_max = 2000;
    double initial_penalty = 1.0;
    double penalty_growth = 10.0;
};

struct OracleSolution {
    Tensor q;                    // n x K
    int iterations = 0;          // inner steps over all outer rounds
    int outer_rounds = 0;
    double constraint_residual = 0.0;     // |sum_i z_i^T q_i - sum_i z_{i,y_i}|
    double normalization_residual = 0.0;  // max_i |1^T q_i - 1|
    double nonnegativity_violation = 0.0; // max(0, -min q)
    double stationarity = 0.0;            // diag(q)-scaled projected gradient, inf-norm
    bool boundary = false;       // target at the edge of the attainable range
};

/// Maximizes sum_i H(q_i) subject to q_i in the simplex and
/// sum_i z_i^T q_i = sum_i z_{i,y_i}, by an augmented Lagrangian on the
/// equality and diag(q)-scaled projected gradient inner solves. Requires n*K <= 64.
/// Throws DomainError when the target is unattainable and NumericalError when
/// the solver does not reach `tol`.
OracleSolution max_entropy_oracle(const Tensor& logits, std::span<const Label> labels,
                                  const OracleOptions& opts = {});

struct Lemma1Report {
    double temperature = 1.0;
    bool root_found = false;
    bool boundary = false;    // T pinned at the bracket edge
    bool degenerate = false;  // every row constant; any T fits
    double max_deviation = 0.0;
    double constraint_residual = 0.0;
    double normalization_residual = 0.0;
    double nonnegativity_violation = 0.0;
    int iterations = 0;
    bool passed = false;      // max_deviation < 10 * tol and constraints < tol
    std::string note;
};

// sum_i z_i^T softmax(z_i/T) - sum_i z_{i,y_i}; decreasing in T.
double logit_match_gap(const Tensor& logits, std::span<const Label> labels, double temperature);

Lemma1Report verify_lemma1(const Tensor& logits, std::span<const Label> labels, const OracleOptions& opts = {});

struct FirstOrderRow {
    double scale = 0.0;
    double predicted = 0.0;  // s * delta^T g
    double measured = 0.0;   // change in summed entropy
    double gap = 0.0;
};

struct FirstOrderReport {
    std::vector<FirstOrderRow> rows;

    // gap[k+1] / gap[k]; NaN where gap[k] is 0.
    std::vector<double> gap_ratios() const;
};

FirstOrderReport first_order_check(const Network& net, const Batch& calib, std::span<const double> direction,
                                   double temperature, std::span<const double> scales);

/// Exhaustive maximizer of delta^T g over delta_j in
/// {0, -(lower_j - alpha_j), beta_j - upper_j}, the vertices of the feasible
/// shift box plus the origin. Ties keep the earliest candidate, which prefers 0.
/// Requires m <= 10.
std::vector<double> bruteforce_box_argmax(std::span<const double> g, std::span<const double> alpha,
                                          std::span<const double> beta, std::span<const double> lower,
                                          std::span<const double> upper);

}  // namespace nclamp
