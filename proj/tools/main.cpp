#include <iostream>

#include "hmslab/cli.hpp"

int main(int argc, char** argv) {
  return hmslab::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
