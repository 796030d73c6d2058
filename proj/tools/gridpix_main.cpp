#include <string>
#include <vector>

#include "gridpix/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return gridpix::cli::run(args);
}
