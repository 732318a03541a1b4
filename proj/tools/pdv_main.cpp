#include <iostream>
#include <string>
#include <vector>

#include "pdv/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pdv::cli::run(args, std::cout, std::cerr);
}
