#include "fe2rom/mesh.hpp"

#include <cstdio>

int main() {
  std::puts("fe2rom: pipeline commands not wired yet");
  return 1;
}
