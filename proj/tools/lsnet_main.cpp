#include <iostream>

#include "lsnet/cli.hpp"

int main(int argc, char** argv) {
  return lsnet::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
