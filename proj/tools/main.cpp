#include <string>
#include <vector>

#include "mlhg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mlhg::cli::run(args);
}
