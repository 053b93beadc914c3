#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace syntaxlm {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitConfig = 2,
    kExitData = 3,
    kExitNumeric = 4,
};

// `args` excludes the program name. Results go to `out`; the resolved config
// echo and diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace syntaxlm
