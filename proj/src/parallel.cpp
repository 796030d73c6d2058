#include "gridpix/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gridpix::par {

namespace {
int g_threads = 0;  // 0 = runtime default
}

int threads() {
#ifdef _OPENMP
  return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
  g_threads = n > 0 ? n : 0;
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#endif
}

void init_from_env() {
  const char* v = std::getenv("GRIDPIX_THREADS");
  if (!v) return;
  try {
    set_threads(std::stoi(v));
  } catch (...) {
    // malformed value: keep the runtime default
  }
}

}  // namespace gridpix::par
