/// @file driver.hpp
/// @brief Runs a configured case into an output directory; the built-in check suite.
#pragma once

#include <optional>
#include <ostream>
#include <string>

#include "ekdns/io.hpp"

namespace ekdns {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;

struct RunOptions {
    std::string out_dir = "out";
    /// Checkpoint to continue an electroconvection run from.
    std::string restart;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

struct RunOutcome {
    int exit_code = kExitOk;
    RunManifest manifest;
    std::string message;
};

/// Executes the case, writes its outputs and manifest.json. Configuration
/// problems are thrown as ConfigError or IoError; solver failures come back
/// with exit_code kExitSolver after the last good state has been saved.
RunOutcome run_case(CaseConfig config, const RunOptions& options);

struct CheckLine {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Quick invariant suite: mesh balance and continuity, carving against a
/// corner test, PNP Jacobian against finite differences, closed-box mass,
/// manufactured divergence and step determinism.
std::vector<CheckLine> run_checks();

}  // namespace ekdns
