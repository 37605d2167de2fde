#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cmkm {

// Execution policy for the data-parallel kernels. Both policies visit the
// same work items with the same per-item arithmetic, so results agree bitwise;
// `serial` is the reference path used by tests and strict-deterministic runs.
enum class Exec { serial, parallel };

Exec default_exec();
void set_default_exec(Exec exec);

int max_threads();

// Sets the default policy for the lifetime of the object.
class ExecScope {
 public:
  explicit ExecScope(Exec exec) : saved_(default_exec()) { set_default_exec(exec); }
  ~ExecScope() { set_default_exec(saved_); }
  ExecScope(const ExecScope&) = delete;
  ExecScope& operator=(const ExecScope&) = delete;

 private:
  Exec saved_;
};

template <typename Body>
void parallel_for(Exec exec, std::ptrdiff_t n, Body&& body) {
#ifdef _OPENMP
  if (exec == Exec::parallel && n > 1) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
    return;
  }
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
}

template <typename Body>
void parallel_for(std::ptrdiff_t n, Body&& body) {
  parallel_for(default_exec(), n, static_cast<Body&&>(body));
}

}  // namespace cmkm
