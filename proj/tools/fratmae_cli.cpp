#include <cstdio>

int main() {
  std::puts("fratmae: subcommands not wired up yet");
  return 1;
}
