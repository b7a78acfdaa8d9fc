#include "floe/cli.hpp"

int main(int argc, char** argv) {
  return floe::run_cli(argc, argv);
}
