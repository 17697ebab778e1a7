#pragma once

#include <string>
#include <vector>

namespace rra {

// Exit status contract of the command-line front end.
enum ExitCode : int { exit_ok = 0, exit_validation = 1, exit_solver = 2, exit_property = 3 };

// Subcommands simulate | solve | sweep | check | report with flags
// --config, --out, --p, --seed, --threads.
int run(int argc, char** argv);
// Same, with `args` excluding the program name.
int run(const std::vector<std::string>& args);

}  // namespace rra
