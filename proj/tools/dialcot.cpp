// SPDX-License-Identifier: Apache-2.0

#include "dialcot/cli.hpp"

int main(int argc, char** argv) { return dialcot::cli::run(argc, argv); }
