#include <iostream>
#include <string>
#include <vector>

#include "tracvc/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return tracvc::run_cli(args, std::cout, std::cerr);
}
