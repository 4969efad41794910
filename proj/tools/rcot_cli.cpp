#include <string>
#include <vector>

#include "rcot/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return rcot::run_cli(args);
}
