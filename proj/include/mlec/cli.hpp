#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mlec/config.hpp"
#include "mlec/tuner.hpp"

namespace mlec {

/// Runs `mlec <subcommand> ...` (args exclude the program name). Returns the
/// process exit code; messages go to `out` and `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Copies tuned hyperparameters into a run configuration.
void apply_params(RunConfig& cfg, const Params& params);

}  // namespace mlec
