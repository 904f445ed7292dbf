// SPDX-License-Identifier: Apache-2.0
#include "dssvae/cli.hpp"

int main(int argc, char** argv) { return dssvae::cli::run(argc, argv); }
