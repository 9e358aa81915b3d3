#include <string>
#include <vector>

#include "mobq/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mobq::cli::run(args);
}
