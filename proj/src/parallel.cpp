#include "panelfilter/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace panelfilter {

namespace {
int g_threads = 1;
}

void set_num_threads(int n) {
  g_threads = n < 1 ? 1 : n;
#ifdef _OPENMP
  omp_set_num_threads(g_threads);
#endif
}

int num_threads() { return g_threads; }

int threads_from_env(int fallback) {
  const char* v = std::getenv("PANELFILTER_THREADS");
  if (v == nullptr) return fallback;
  try {
    int n = std::stoi(v);
    return n >= 1 ? n : fallback;
  } catch (...) {
    return fallback;
  }
}

}  // namespace panelfilter
