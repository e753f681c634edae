#include <string>
#include <vector>

#include "mhtn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mhtn::cli_run(args);
}
