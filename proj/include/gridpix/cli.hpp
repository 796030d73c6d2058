#pragma once

#include <string>
#include <vector>

namespace gridpix::cli {

// Entry point behind the gridpix binary. args excludes argv[0].
// Exit codes: 0 success, 1 runtime failure (stderr gets "error: ..."),
// 2 usage problems.
int run(const std::vector<std::string>& args);

}  // namespace gridpix::cli
