#pragma once

#include <ostream>

namespace sct {

// Entry point of the `sct` tool. Returns the process exit code: 0 success, 1 usage or
// configuration error, 2 data/file error, 3 numeric failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sct
