#include <iostream>
#include <string>
#include <vector>

#include "wormgnn/allocator.hpp"
#include "wormgnn/cli.hpp"

int main(int argc, char** argv) {
    wormgnn::tune_allocator();
    return wormgnn::cli::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
