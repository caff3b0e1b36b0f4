#include <iostream>

#include "mtpfn/bench.hpp"

int main(int argc, char** argv) {
  return mtpfn::bench::run_cli(argc, argv, {std::cout, std::cerr, {}});
}
