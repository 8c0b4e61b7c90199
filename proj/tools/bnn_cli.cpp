#include <cstdio>

int main() {
  std::puts("bnn: placeholder");
  return 0;
}
