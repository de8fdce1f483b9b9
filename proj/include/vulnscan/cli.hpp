// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vulnscan {

/// Entry point of the `vulnscan` tool. args[0] is the program name.
/// Returns the process exit status; usage problems and pipeline errors are
/// reported on `err` with a nonzero status.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vulnscan
