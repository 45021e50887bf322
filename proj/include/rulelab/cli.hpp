#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rulelab {

// Entry point of the `rulelab` tool. Returns the process exit code: 0 on
// success, 2 on configuration/usage errors, 1 on runtime errors. Flags
// override --config file values, which override built-in defaults; every run
// writes resolved_config.json into its output directory. The output root
// defaults to $RULELAB_OUT (or ./rulelab_out) when --out is not given.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rulelab
