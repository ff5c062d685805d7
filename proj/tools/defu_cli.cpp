#include <iostream>

#include "defu/cli.hpp"

int main(int argc, char** argv) {
  return defu::run_cli(argc, argv, std::cout, std::cerr);
}
