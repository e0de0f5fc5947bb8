#include <iostream>
#include <string>
#include <vector>

#include "clmlf/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return clmlf::cli::dispatch(args, std::cout, std::cerr);
}
