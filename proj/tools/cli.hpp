#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace molace {

/// Entry point of the molace tool. Returns 0 on success, 1 on invalid input or
/// configuration, 2 when a stage fails at run time.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace molace
