#include <cstdio>

int main() {
  std::puts("locadit: subcommands not wired up yet");
  return 0;
}
