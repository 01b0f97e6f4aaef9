#include <iostream>
#include <string>
#include <vector>

#include "vea/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return vea::cli::run(std::move(args), std::cout, std::cerr);
}
