#include <string>
#include <vector>

#include "appsign/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return appsign::run_cli(args);
}
