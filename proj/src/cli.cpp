#include "nclamp/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "nclamp/calibrators.hpp"
#include "nclamp/clamping.hpp"
#include "nclamp/data.hpp"
#include "nclamp/errors.hpp"
#include "nclamp/experiment.hpp"
#include "nclamp/io.hpp"
#include "nclamp/metrics.hpp"
#include "nclamp/theory.hpp"

namespace nclamp {

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    ExperimentConfig cfg;
    SyntheticSpec synth;
    std::vector<std::size_t> hidden{32, 32};
    int train_epochs = 500;
    double train_lr = 0.5;
    std::optional<double> lr;
    std::optional<int> epochs;
    std::size_t batch_size = 512;
    std::string init = "data-driven";
    std::vector<double> gammas;
    std::vector<double> lambdas;
    double grid_lo = 0.0;
    double grid_hi = 5.0;
    double grid_step = 0.001;
    std::string table_path;
    std::string params_path;
    std::size_t instances = 50;
};

const CLI::Validator kOpenUnit(
    [](std::string& s) -> std::string {
        double v = 0.0;
        if (!CLI::detail::lexical_cast(s, v) || !(v > 0.0 && v < 1.0)) return "value must lie in (0, 1)";
        return {};
    },
    "in (0,1)");

std::string fmt(double v) {
    std::ostringstream ss;
    ss << std::setprecision(6) << v;
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) { write_file(path, text); }

struct Loaded {
    Network net;
    ExperimentSplits splits;
};

Loaded load_experiment(const ExperimentConfig& cfg) {
    Network net = load_network(cfg.model_path);
    const Dataset data = load_dataset(cfg.data_path);
    if (data.batch.features.cols() != net.input_dim()) {
        throw DimensionError("dataset has m=" + std::to_string(data.batch.features.cols()) + " but model expects " +
                             std::to_string(net.input_dim()));
    }
    if (data.class_count != net.class_count()) {
        throw DimensionError("dataset has K=" + std::to_string(data.class_count) + " but model outputs " +
                             std::to_string(net.class_count()));
    }
    return Loaded{std::move(net), experiment_splits(data.batch, cfg.train_fraction, cfg.split, cfg.seed)};
}

FitConfig fit_config(const Options& o) {
    FitConfig fc;
    if (o.lr) fc.learning_rate = *o.lr;
    if (o.epochs) fc.epochs = *o.epochs;
    return fc;
}

ClampHyper clamp_hyper(const Options& o) {
    ClampHyper h;
    if (o.lr) h.learning_rate = *o.lr;
    if (o.epochs) h.epochs = *o.epochs;
    h.batch_size = o.batch_size;
    h.init = o.init == "random" ? DeltaInit::random : (o.init == "zero" ? DeltaInit::zero : DeltaInit::data_driven);
    h.init_seed = o.cfg.seed;
    return h;
}

SweepResult run_sweep(const Options& o, const Loaded& ld, bool focal) {
    const std::vector<double> gammas = focal ? (o.gammas.empty() ? default_gamma_grid() : o.gammas)
                                             : std::vector<double>{0.0};
    const std::vector<double> lambdas = o.lambdas.empty() ? default_lambda_grid() : o.lambdas;
    return sweep_hyper(ld.net, ld.splits.calibration, gammas, lambdas, clamp_hyper(o), o.cfg.seed, o.cfg.bins);
}

int cmd_gen_data(const Options& o, std::ostream& out) {
    const Dataset d = gen_synthetic(o.synth, o.cfg.seed);
    save_dataset(o.cfg.out_path, d);
    out << "gen-data: wrote n=" << d.batch.size() << " m=" << d.batch.features.cols() << " K=" << d.class_count
        << " to " << o.cfg.out_path << "\n";
    return kExitOk;
}

int cmd_train_base(const Options& o, std::ostream& out) {
    const Dataset data = load_dataset(o.cfg.data_path);
    const ExperimentSplits s = experiment_splits(data.batch, o.cfg.train_fraction, o.cfg.split, o.cfg.seed);
    const auto arch = mlp_architecture(data.batch.features.cols(), o.hidden, data.class_count);
    const Network net = train_base_classifier(s.train, arch, o.train_epochs, o.train_lr, o.cfg.seed);
    save_network(o.cfg.out_path, net);
    const ProbBatch p(softmax_rows(forward(net, s.train.features), 1.0), s.train.labels);
    out << "train-base: n_train=" << s.train.size() << " train_accuracy=" << fmt(accuracy(p))
        << " train_ece=" << fmt(ece(p, o.cfg.bins).value) << " -> " << o.cfg.out_path << "\n";
    return kExitOk;
}

int cmd_calibrate(const Options& o, std::ostream& out) {
    const Loaded ld = load_experiment(o.cfg);
    const std::string& method = o.cfg.method;
    out << "calibrate: method=" << method << " n_calib=" << ld.splits.calibration.size() << " ";

    if (method == "clamp-ce" || method == "clamp-fl") {
        const SweepResult r = run_sweep(o, ld, method == "clamp-fl");
        write_text(o.cfg.out_path, dump_json(clamp_params_to_json(r.params)));
        if (!o.table_path.empty()) {
            std::ostringstream csv;
            write_sweep_csv(csv, r.table);
            write_text(o.table_path, csv.str());
        }
        out << "gamma=" << fmt(r.best_gamma) << " lambda=" << fmt(r.best_lambda) << " T=" << fmt(r.params.temperature)
            << " -> " << o.cfg.out_path << "\n";
        return kExitOk;
    }

    const LogitSet logits = compute_logits(ld.net, ld.splits.calibration);
    LinearCalib calib;
    std::string extra;
    if (method == "temp-nll") {
        calib = fit_temperature_nll(logits, fit_config(o));
    } else if (method == "temp-grid") {
        calib = fit_temperature_grid(logits, o.grid_lo, o.grid_hi, o.grid_step, o.cfg.bins);
    } else if (method == "vector") {
        calib = fit_linear_scaling(logits, CalibFamily::vector, std::nullopt, fit_config(o));
    } else if (method == "matrix") {
        calib = fit_linear_scaling(logits, CalibFamily::matrix, std::nullopt, fit_config(o));
    } else {
        const OdirFit f = method == "ms-odir" ? fit_ms_odir(logits, fit_config(o), o.cfg.bins)
                                              : fit_dirichlet(logits, fit_config(o), o.cfg.bins);
        calib = f.calibrator;
        extra = "lambda=" + fmt(f.lambda) + " ";
    }
    write_text(o.cfg.out_path, dump_json(calibrator_to_json(calib)));
    out << extra << "T=" << fmt(calib.temperature) << " -> " << o.cfg.out_path << "\n";
    return kExitOk;
}

ClampMode parse_mode(const std::string& mode) {
    if (mode == "none") return ClampMode::none;
    if (mode == "input-only") return ClampMode::input_only;
    if (mode == "output-only") return ClampMode::output_only;
    return ClampMode::joint;
}

ProbBatch evaluated_probs(const Options& o, const Loaded& ld) {
    const Batch& test = ld.splits.test;
    const ClampMode mode = parse_mode(o.cfg.mode);
    if (mode == ClampMode::none) return ProbBatch(softmax_rows(forward(ld.net, test.features), 1.0), test.labels);
    if (o.cfg.calibrator_path.empty()) throw UsageError("--mode " + o.cfg.mode + " requires --calibrator");

    const Json doc = parse_json(read_file(o.cfg.calibrator_path), o.cfg.calibrator_path);
    if (doc.is_object() && doc.contains("delta")) {
        const ClampParams params = clamp_params_from_json(doc);
        return ProbBatch(apply_clamping(ld.net, params, test.features, mode), test.labels);
    }
    const LinearCalib calib = calibrator_from_json(doc);
    if (mode == ClampMode::input_only) throw UsageError("--mode input-only requires clamp parameters");
    return apply_output_calibrator(calib, compute_logits(ld.net, test));
}

int cmd_evaluate(const Options& o, std::ostream& out) {
    const Loaded ld = load_experiment(o.cfg);
    const ProbBatch p = evaluated_probs(o, ld);
    const MetricReport r = evaluate_metrics(p, o.cfg.bins, o.cfg.ranges);
    write_text(o.cfg.out_path, dump_json(metric_report_to_json(r)));
    out << "evaluate: mode=" << o.cfg.mode << " n_test=" << p.size() << " accuracy=" << fmt(r.accuracy)
        << " ece=" << fmt(r.ece) << " ace=" << fmt(r.ace) << " sce=" << fmt(r.sce) << " nll=" << fmt(r.nll)
        << " entropy=" << fmt(r.mean_entropy) << " -> " << o.cfg.out_path << "\n";
    return kExitOk;
}

int cmd_reliability(const Options& o, std::ostream& out) {
    const Loaded ld = load_experiment(o.cfg);
    const ProbBatch p = evaluated_probs(o, ld);
    const EceResult e = ece(p, o.cfg.bins);
    std::ostringstream csv;
    write_reliability_csv(csv, e.report);
    write_text(o.cfg.out_path, csv.str());
    out << "reliability: mode=" << o.cfg.mode << " bins=" << o.cfg.bins << " ece=" << fmt(e.value) << " -> "
        << o.cfg.out_path << "\n";
    return kExitOk;
}

int cmd_sweep(const Options& o, std::ostream& out) {
    const Loaded ld = load_experiment(o.cfg);
    const SweepResult r = run_sweep(o, ld, true);
    std::ostringstream csv;
    write_sweep_csv(csv, r.table);
    write_text(o.cfg.out_path, csv.str());
    if (!o.params_path.empty()) write_text(o.params_path, dump_json(clamp_params_to_json(r.params)));
    out << "sweep: cells=" << r.table.size() << " best_gamma=" << fmt(r.best_gamma)
        << " best_lambda=" << fmt(r.best_lambda) << " -> " << o.cfg.out_path << "\n";
    return kExitOk;
}

Json lemma_section(std::size_t count, std::mt19937_64& rng, std::size_t& passed) {
    Json rows = Json::array();
    std::size_t skipped = 0;
    passed = 0;
    while (rows.size() < count) {
        const LogitInstance inst = random_logit_instance(5, 3, rng);
        if (!has_positive_temperature_root(inst)) {
            ++skipped;
            continue;
        }
        const Lemma1Report r = verify_lemma1(inst.logits, inst.labels);
        passed += r.passed ? 1 : 0;
        Json row;
        row["index"] = rows.size();
        row["temperature"] = r.temperature;
        row["max_deviation"] = r.max_deviation;
        row["constraint_residual"] = r.constraint_residual;
        row["normalization_residual"] = r.normalization_residual;
        row["nonnegativity_violation"] = r.nonnegativity_violation;
        row["iterations"] = r.iterations;
        row["passed"] = r.passed;
        rows.push_back(std::move(row));
    }
    Json doc;
    doc["instances"] = std::move(rows);
    doc["skipped_no_positive_root"] = skipped;
    doc["passed"] = passed;
    doc["total"] = count;
    return doc;
}

Json box_section(std::size_t count, std::mt19937_64& rng, std::size_t& passed) {
    std::uniform_int_distribution<std::size_t> pick_m(1, 8);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> unit(0.0, 1.0);
    Json rows = Json::array();
    passed = 0;
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t m = pick_m(rng);
        std::vector<double> g(m), alpha(m), beta(m), lower(m), upper(m);
        for (std::size_t j = 0; j < m; ++j) {
            g[j] = unit(rng);
            std::array<double, 4> pts{u01(rng), u01(rng), u01(rng), u01(rng)};
            std::sort(pts.begin(), pts.end());
            alpha[j] = pts[0];
            lower[j] = pts[1];
            upper[j] = pts[2];
            beta[j] = pts[3];
        }
        const auto eta = box_slack(g, alpha, beta, lower, upper);
        std::vector<double> closed(m, 0.0);
        for (std::size_t j = 0; j < m; ++j) closed[j] = g[j] > 0.0 ? eta[j] : (g[j] < 0.0 ? -eta[j] : 0.0);
        const bool match = bruteforce_box_argmax(g, alpha, beta, lower, upper) == closed;
        passed += match ? 1 : 0;
        rows.push_back(Json{{"index", k}, {"m", m}, {"match", match}});
    }
    Json doc;
    doc["instances"] = std::move(rows);
    doc["passed"] = passed;
    doc["total"] = count;
    return doc;
}

Json first_order_section(std::uint64_t seed, bool& ok) {
    const std::size_t m = 4;
    const std::size_t n = 32;
    const std::vector<std::size_t> no_hidden;
    const Network net = init_network(m, mlp_architecture(m, no_hidden, 3), seed);
    std::mt19937_64 rng(seed + 7);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> unit(0.0, 1.0);
    Tensor x(n, m);
    for (double& v : x.values()) v = u01(rng);
    const Batch calib(std::move(x), std::vector<Label>(n, 0));
    std::vector<double> dir(m);
    double norm = 0.0;
    for (double& v : dir) {
        v = unit(rng);
        norm += v * v;
    }
    for (double& v : dir) v /= std::sqrt(norm);
    std::vector<double> scales;
    for (int k = 0; k < 6; ++k) scales.push_back(0.2 * std::ldexp(1.0, -k));
    const FirstOrderReport r = first_order_check(net, calib, dir, 1.0, scales);

    Json rows = Json::array();
    for (const auto& row : r.rows) {
        rows.push_back(Json{{"scale", row.scale}, {"predicted", row.predicted}, {"measured", row.measured},
                            {"gap", row.gap}});
    }
    const auto ratios = r.gap_ratios();
    ok = !ratios.empty() && std::all_of(ratios.begin(), ratios.end(), [](double q) { return q >= 0.15 && q <= 0.35; });
    Json doc;
    doc["rows"] = std::move(rows);
    doc["gap_ratios"] = ratios;
    doc["passed"] = ok;
    return doc;
}

int cmd_verify_theory(const Options& o, std::ostream& out) {
    std::mt19937_64 rng(o.cfg.seed);
    std::size_t lemma_passed = 0;
    std::size_t box_passed = 0;
    bool first_order_ok = false;
    Json doc;
    doc["lemma1"] = lemma_section(o.instances, rng, lemma_passed);
    doc["box_argmax"] = box_section(o.instances, rng, box_passed);
    doc["first_order"] = first_order_section(o.cfg.seed, first_order_ok);
    const bool all = lemma_passed == o.instances && box_passed == o.instances && first_order_ok;
    doc["passed"] = all;
    write_text(o.cfg.out_path, dump_json(doc));
    out << "verify-theory: lemma1 " << lemma_passed << "/" << o.instances << " box_argmax " << box_passed << "/"
        << o.instances << " first_order " << (first_order_ok ? "pass" : "fail") << " -> " << o.cfg.out_path << "\n";
    return all ? kExitOk : kExitNumerical;
}

void add_metric_flags(CLI::App* sub, Options& o) {
    sub->add_option("--bins", o.cfg.bins, "ECE/SCE bin count M")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--ranges", o.cfg.ranges, "ACE range count R")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_split_flags(CLI::App* sub, Options& o) {
    sub->add_option("--seed", o.cfg.seed, "RNG seed")->capture_default_str();
    sub->add_option("--train-fraction", o.cfg.train_fraction, "share of rows used to train the base model")
        ->capture_default_str()
        ->check(kOpenUnit);
    sub->add_option("--split", o.cfg.split, "calibration share of the held-out rows")
        ->capture_default_str()
        ->check(kOpenUnit);
}

void add_model_data(CLI::App* sub, Options& o) {
    sub->add_option("--model", o.cfg.model_path, "model JSON")->required();
    sub->add_option("--data", o.cfg.data_path, "dataset file")->required();
    add_split_flags(sub, o);
}

void add_clamp_flags(CLI::App* sub, Options& o) {
    sub->add_option("--gamma-grid", o.gammas, "focal gamma values")->delimiter(',');
    sub->add_option("--lambda-grid", o.lambdas, "weight-decay values")->delimiter(',');
    sub->add_option("--batch-size", o.batch_size, "mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--init", o.init, "delta initialisation")
        ->capture_default_str()
        ->check(CLI::IsMember({"random", "data-driven", "zero"}));
}

}  // namespace

int run_command(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Post-hoc calibration with neural clamping", "nclamp"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic Gaussian-mixture dataset");
    gen->add_option("--out", o.cfg.out_path, "output dataset file")->required();
    gen->add_option("--seed", o.cfg.seed, "RNG seed")->capture_default_str();
    gen->add_option("--classes", o.synth.classes)->capture_default_str()->check(CLI::Range(2, 1 << 20));
    gen->add_option("--dim", o.synth.dim)->capture_default_str()->check(CLI::PositiveNumber);
    gen->add_option("--samples", o.synth.samples)->capture_default_str()->check(CLI::PositiveNumber);
    gen->add_option("--mean-spread", o.synth.mean_spread)->capture_default_str()->check(CLI::NonNegativeNumber);
    gen->add_option("--cluster-std", o.synth.cluster_std)->capture_default_str()->check(CLI::NonNegativeNumber);
    gen->add_option("--label-noise", o.synth.label_noise)->capture_default_str()->check(CLI::Range(0.0, 1.0));

    auto* train = app.add_subcommand("train-base", "train the base MLP on the training rows");
    train->add_option("--data", o.cfg.data_path, "dataset file")->required();
    train->add_option("--out", o.cfg.out_path, "output model JSON")->required();
    add_split_flags(train, o);
    add_metric_flags(train, o);
    train->add_option("--hidden", o.hidden, "hidden widths")->delimiter(',')->capture_default_str();
    train->add_option("--epochs", o.train_epochs)->capture_default_str()->check(CLI::NonNegativeNumber);
    train->add_option("--lr", o.train_lr)->capture_default_str()->check(CLI::PositiveNumber);

    auto* cal = app.add_subcommand("calibrate", "fit a calibrator on the calibration rows");
    add_model_data(cal, o);
    add_metric_flags(cal, o);
    add_clamp_flags(cal, o);
    cal->add_option("--method", o.cfg.method)
        ->required()
        ->check(CLI::IsMember(
            {"temp-nll", "temp-grid", "vector", "matrix", "ms-odir", "dir-odir", "clamp-ce", "clamp-fl"}));
    cal->add_option("--out", o.cfg.out_path, "output calibrator JSON")->required();
    cal->add_option("--lr", o.lr, "learning rate (default 0.001)")->check(CLI::PositiveNumber);
    cal->add_option("--epochs", o.epochs, "epochs (default 1000, clamping 100)")->check(CLI::NonNegativeNumber);
    cal->add_option("--grid-lo", o.grid_lo)->capture_default_str();
    cal->add_option("--grid-hi", o.grid_hi)->capture_default_str();
    cal->add_option("--grid-step", o.grid_step)->capture_default_str()->check(CLI::PositiveNumber);
    cal->add_option("--table", o.table_path, "sweep table CSV (clamping methods)");

    const std::vector<std::string> modes{"none", "input-only", "output-only", "joint"};
    auto* eval = app.add_subcommand("evaluate", "metric report on the test rows");
    add_model_data(eval, o);
    add_metric_flags(eval, o);
    eval->add_option("--calibrator", o.cfg.calibrator_path, "calibrator or clamp-params JSON");
    eval->add_option("--mode", o.cfg.mode)->capture_default_str()->check(CLI::IsMember(modes));
    eval->add_option("--out", o.cfg.out_path, "output report JSON")->required();

    auto* rel = app.add_subcommand("reliability", "reliability bins on the test rows as CSV");
    add_model_data(rel, o);
    add_metric_flags(rel, o);
    rel->add_option("--calibrator", o.cfg.calibrator_path, "calibrator or clamp-params JSON");
    rel->add_option("--mode", o.cfg.mode)->capture_default_str()->check(CLI::IsMember(modes));
    rel->add_option("--out", o.cfg.out_path, "output CSV")->required();

    auto* sweep = app.add_subcommand("sweep", "focal-loss clamping grid over gamma and lambda");
    add_model_data(sweep, o);
    add_metric_flags(sweep, o);
    add_clamp_flags(sweep, o);
    sweep->add_option("--lr", o.lr, "learning rate (default 0.001)")->check(CLI::PositiveNumber);
    sweep->add_option("--epochs", o.epochs, "epochs (default 100)")->check(CLI::NonNegativeNumber);
    sweep->add_option("--out", o.cfg.out_path, "output table CSV")->required();
    sweep->add_option("--params-out", o.params_path, "best clamp parameters JSON");

    auto* verify = app.add_subcommand("verify-theory", "numerical checks of the entropy results");
    verify->add_option("--seed", o.cfg.seed, "RNG seed")->capture_default_str();
    verify->add_option("--instances", o.instances)->capture_default_str()->check(CLI::PositiveNumber);
    verify->add_option("--out", o.cfg.out_path, "output report JSON")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(o, out);
        if (train->parsed()) return cmd_train_base(o, out);
        if (cal->parsed()) return cmd_calibrate(o, out);
        if (eval->parsed()) return cmd_evaluate(o, out);
        if (rel->parsed()) return cmd_reliability(o, out);
        if (sweep->parsed()) return cmd_sweep(o, out);
        return cmd_verify_theory(o, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
}

}  // namespace nclamp
