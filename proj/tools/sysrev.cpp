#include <string>
#include <vector>

#include "sysrev/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sysrev::cli::run_command(args);
}
