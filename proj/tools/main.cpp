// SPDX-License-Identifier: Apache-2.0
#include "recalign/cli.hpp"

int main(int argc, char** argv) { return recalign::cli_main(argc, argv); }
