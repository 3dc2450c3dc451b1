#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace magup::cli {

// Runs the `magup` command line. Returns the process exit code; errors are
// reported on `err`, results on `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace magup::cli
