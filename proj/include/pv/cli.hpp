#pragma once

#include <string>
#include <vector>

namespace pv::cli {

/// Entry point of the `pv` tool. Returns 0 on success, 1 on validation
/// failures (bad flags, config, inputs), 2 on runtime failures.
int run(int argc, const char* const* argv);
/// Same, with args[0] as the program name.
int run(const std::vector<std::string>& args);

}  // namespace pv::cli
