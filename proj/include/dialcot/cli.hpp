// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point. Exit status: 0 success, 1 runtime failure, 2 invalid
// configuration or usage.

#pragma once

namespace dialcot::cli {

int run(int argc, char** argv);

}  // namespace dialcot::cli
