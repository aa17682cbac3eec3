// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gde {

/// Command-line entry point. `args` excludes the program name. Returns 0 on
/// success, 1 on a runtime error, 2 on a usage error (usage goes to `err`).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gde
