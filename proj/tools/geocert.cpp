// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#include <exception>
#include <iostream>

#include "geocert/cli.hpp"

int main(int argc, char** argv) {
    try {
        return geocert::run_command(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
