#include "cmkm/parallel.hpp"

#include <atomic>

namespace cmkm {

namespace {
std::atomic<Exec> g_exec{Exec::parallel};
}

Exec default_exec() { return g_exec.load(std::memory_order_relaxed); }

void set_default_exec(Exec exec) { g_exec.store(exec, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace cmkm
