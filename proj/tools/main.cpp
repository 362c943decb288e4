#include <iostream>

#include "dwclust/cli.hpp"

int main(int argc, char** argv) {
    return dwclust::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
