#pragma once

namespace bafpn {

// Entry point behind the bafpn binary. Exit codes: 0 success, 1 suite or run
// failure, 2 usage error.
int cli_main(int argc, const char* const* argv);

}  // namespace bafpn
