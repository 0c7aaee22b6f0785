#pragma once

namespace unirep {

// Runs one CLI command. Exit codes: 0 success, 1 usage error, 2
// data/validation error, 3 numeric/training error.
int dispatch(int argc, const char* const* argv);

}  // namespace unirep
