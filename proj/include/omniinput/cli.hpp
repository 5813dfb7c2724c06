#pragma once

#include <iosfwd>

namespace omni::cli {

// Entry point of the `omniinput` command. Returns the process exit status;
// failures print a JSON object {"error","message"[,"field"]} to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace omni::cli
