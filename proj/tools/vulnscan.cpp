// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "vulnscan/cli.hpp"

int main(int argc, char** argv) {
  return vulnscan::cli_main(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
