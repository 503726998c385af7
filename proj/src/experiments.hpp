// Experiment runners: one JSON config in, one JSON summary out, artifacts
// (datasets, maps, checkpoints, CSV tables) written to paths named in the
// config. The CLI and the C API both funnel through run_command.
#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace eqm {

// Commands: synth, extract, train-net, learn-map, eval-map, learn-translayer,
// stitch, invariance, compensate, bench-pose, selftest. Unknown commands and
// unknown or ill-typed config keys throw Errc::invalid_argument; runtime
// problems surface as the other Errc values. Every command accepts "seed",
// "threads", "verbose" and "dry_run"; with dry_run the summary describes the
// plan and nothing is written.
nlohmann::json run_command(const std::string& command, const nlohmann::json& config);

}  // namespace eqm
