#pragma once

// Command-line surface. run_cli never throws; failures print one line of the
// form "error: code=<n> kind=<usage|data|invariant> msg=<text>" to `err` and
// return the code.

#include <ostream>
#include <string>
#include <vector>

namespace hmslab {

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hmslab
