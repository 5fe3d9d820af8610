#include <iostream>

#include "medground/cli.h"

int main(int argc, char** argv) {
  return medground::cli::Run(std::vector<std::string>(argv + 1, argv + argc), std::cout,
                             std::cerr);
}
