#include <iostream>

#include "nighthaze/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return nighthaze::cli_main(args, std::cout, std::cerr);
}
