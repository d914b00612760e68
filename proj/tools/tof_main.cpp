#include <iostream>
#include <string>
#include <vector>

#include "tof/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tof::run_cli(args, std::cout, std::cerr);
}
