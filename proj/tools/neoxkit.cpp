#include <iostream>
#include <string>
#include <vector>

#include "neox/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return neox::cli::dispatch(args, std::cout, std::cerr);
}
