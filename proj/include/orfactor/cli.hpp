#pragma once

namespace orfactor {

/// Exit codes: 0 success, 1 runtime failure, 2 usage or config error,
/// 3 incomplete table under --strict.
int cli_main(int argc, char** argv);

}  // namespace orfactor
