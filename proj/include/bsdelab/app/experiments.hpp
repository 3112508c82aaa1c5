#pragma once

#include "bsdelab/app/config.hpp"

#include <string>
#include <vector>

namespace bsdelab {

struct Artifact {
    std::string name;    // file name inside the output directory
    std::string content; // CSV or JSON text
};

struct RunResult {
    Json summary;        // kind, config, provenance, results, warnings, artifacts, status
    std::vector<Artifact> artifacts;
    bool checks_passed = true; // false when a built-in verification (oracle, suite) failed
};

/// Runs one resolved experiment config. ConfigError and NumericalError propagate.
RunResult run_experiment(const Json& resolved);

/// Writes summary.json and the artifacts into dir (created if missing).
void write_run(const RunResult& run, const std::string& dir);

} // namespace bsdelab
