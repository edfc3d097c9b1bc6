#include <iostream>
#include <string>
#include <vector>

#include "epitome/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return epitome::cli::run(args, std::cout, std::cerr).exit_code;
}
