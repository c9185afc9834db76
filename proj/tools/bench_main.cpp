#include <cstdio>

int main() {
  std::puts("planeinit_bench: not wired up yet");
  return 1;
}
