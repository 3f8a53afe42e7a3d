#include <iostream>
#include <string>
#include <vector>

#include "par/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return par::cli::run(args, std::cout, std::cerr);
}
