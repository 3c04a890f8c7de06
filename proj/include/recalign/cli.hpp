// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace recalign {

/// Entry point of the `recalign` tool. Returns 2 on usage errors (unknown
/// subcommand, bad flags, missing config file) and 1 on runtime failures.
int cli_main(int argc, char** argv);

}  // namespace recalign
