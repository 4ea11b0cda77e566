#include <iostream>
#include <string>
#include <vector>

#include "hyperagg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return hyperagg::cli::run(args, std::cout, std::cerr);
}
