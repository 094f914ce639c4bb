#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mmfs {

// Command-line entry point. Returns 0 on success, 2 on usage errors and 1 on
// runtime errors; diagnostics go to `err`, informational output to `out`.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, char** argv);

} // namespace mmfs
