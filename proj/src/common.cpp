#include "pgs/common.hpp"

namespace pgs {

void set_thread_count(int n) {
#ifdef PGS_HAVE_OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int thread_count() {
#ifdef PGS_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace pgs
