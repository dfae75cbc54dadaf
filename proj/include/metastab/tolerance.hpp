#pragma once

namespace metastab {

/// Numerical tolerances shared by the verification checks of every module.
/// All of them are relative unless the name says otherwise.
struct ToleranceConfig {
    double verify = 1e-10;        // post-condition checks on solver outputs
    double stationarity = 1e-12;  // ||pi^T L||_inf relative to the max rate
    double normalization = 1e-12; // |sum(pi) - 1|
    double admissibility = 1e-9;  // constraint checks on user-supplied test objects
    int dense_guard = 5000;       // largest state count for dense eigen-solves

    /// Defaults, with `verify` overridden by the METASTAB_TOL environment
    /// variable when it holds a positive number.
    static ToleranceConfig from_env();
};

/// Process-wide defaults (read once from the environment).
const ToleranceConfig& default_tolerance();

}  // namespace metastab
