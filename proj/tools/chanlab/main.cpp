#include <chanlab/cli/app.hpp>

#include <iostream>

int main(int argc, char** argv) {
  chanlab::cli::tune_allocator();
  return chanlab::cli::run(argc, argv, std::cout, std::cerr);
}
