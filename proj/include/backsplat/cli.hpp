#pragma once

namespace backsplat {

/// Entry point behind the `backsplat` binary. Returns 0 on success, 2 on
/// usage errors, 1 on runtime failures.
int cli_main(int argc, char** argv);

}  // namespace backsplat
