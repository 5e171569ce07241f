// Placeholder entry point; subcommands land once the model stack exists.
#include <cstdio>

int main() {
  std::printf("slt: no subcommand\n");
  return 2;
}
