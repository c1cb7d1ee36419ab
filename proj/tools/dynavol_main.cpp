// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
#include "dynavol/cli.hpp"

int main(int argc, char** argv) { return dynavol::run_cli(argc, argv); }
