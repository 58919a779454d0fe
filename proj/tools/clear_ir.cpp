#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "clearir/cli.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep large activation buffers on the heap instead of fresh mmaps; each
  // new mapping costs a round of page faults per training step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return clearir::run(std::vector<std::string>(argv + 1, argv + argc));
}
