#include <iostream>

#include "tdsr/cli/commands.hpp"

int main(int argc, char** argv) {
  return tdsr::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
