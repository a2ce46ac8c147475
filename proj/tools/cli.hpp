#pragma once

#include <iosfwd>

namespace gsavatar {

/// Entry point of the gsavatar command line; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gsavatar
