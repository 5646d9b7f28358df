#pragma once

// Command-line driver. Subcommands: gen-data, train-base, calibrate,
// evaluate, sweep, verify-theory, reliability.
//
// Exit codes: 0 success, 1 usage error, 2 data or schema error,
// 3 numerical failure.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>

namespace nclamp {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

struct ExperimentConfig {
    std::string model_path;
    std::string data_path;
    std::string calibrator_path;
    std::string out_path;
    std::string method;
    std::string mode = "joint";
    std::uint64_t seed = 0;
    std::size_t bins = 15;
    std::size_t ranges = 15;
    double train_fraction = 0.5;  // rows used by train-base
    double split = 0.5;           // calibration share of the held-out rows
};

// `args` excludes the program name.
int run_command(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace nclamp
