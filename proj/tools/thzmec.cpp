#include <Eigen/Core>
#include <iostream>

#include "thzmec/cli.hpp"

int main(int argc, char** argv) {
  Eigen::setNbThreads(1);
  return thzmec::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
