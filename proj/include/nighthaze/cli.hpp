#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace nighthaze {

/// Entry point of the `nighthaze` tool. `args` excludes the program name.
/// Returns 0 on success, 2 on usage errors and 1 on runtime failures (with a
/// one-line diagnostic on `err`).
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nighthaze
