#include "tsim/gemm.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tsim/common.hpp"

namespace tsim {

namespace {

inline bool go_parallel(int m) {
#ifdef _OPENMP
  return m >= 8 && max_workers() > 1 && !omp_in_parallel();
#else
  (void)m;
  return false;
#endif
}

inline void row_nt(const double* a, const double* B, double* c, int k, int n, bool accumulate) {
  for (int j = 0; j < n; ++j) {
    const double* b = B + static_cast<long>(j) * k;
    double acc = 0.0;
    for (int p = 0; p < k; ++p) acc += a[p] * b[p];
    if (accumulate) {
      c[j] += acc;
    } else {
      c[j] = acc;
    }
  }
}

inline void row_nn(const double* a, const double* B, double* c, int k, int n, bool accumulate) {
  if (!accumulate) {
    for (int j = 0; j < n; ++j) c[j] = 0.0;
  }
  for (int p = 0; p < k; ++p) {
    const double ap = a[p];
    const double* b = B + static_cast<long>(p) * n;
    for (int j = 0; j < n; ++j) c[j] += ap * b[j];
  }
}

inline void row_tn(const double* A, const double* B, double* c, int i, int m, int k, int n,
                   bool accumulate) {
  if (!accumulate) {
    for (int j = 0; j < n; ++j) c[j] = 0.0;
  }
  for (int p = 0; p < k; ++p) {
    const double ap = A[static_cast<long>(p) * m + i];
    const double* b = B + static_cast<long>(p) * n;
    for (int j = 0; j < n; ++j) c[j] += ap * b[j];
  }
}

}  // namespace

void gemm_nt_serial(const double* A, const double* B, double* C, int m, int k, int n,
                    bool accumulate) {
  for (int i = 0; i < m; ++i) {
    row_nt(A + static_cast<long>(i) * k, B, C + static_cast<long>(i) * n, k, n, accumulate);
  }
}

void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
  if (!go_parallel(m)) {
    gemm_nt_serial(A, B, C, m, k, n, accumulate);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_workers())
  for (int i = 0; i < m; ++i) {
    row_nt(A + static_cast<long>(i) * k, B, C + static_cast<long>(i) * n, k, n, accumulate);
  }
#endif
}

void gemm_nn_serial(const double* A, const double* B, double* C, int m, int k, int n,
                    bool accumulate) {
  for (int i = 0; i < m; ++i) {
    row_nn(A + static_cast<long>(i) * k, B, C + static_cast<long>(i) * n, k, n, accumulate);
  }
}

void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
  if (!go_parallel(m)) {
    gemm_nn_serial(A, B, C, m, k, n, accumulate);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_workers())
  for (int i = 0; i < m; ++i) {
    row_nn(A + static_cast<long>(i) * k, B, C + static_cast<long>(i) * n, k, n, accumulate);
  }
#endif
}

void gemm_tn_serial(const double* A, const double* B, double* C, int m, int k, int n,
                    bool accumulate) {
  for (int i = 0; i < m; ++i) {
    row_tn(A, B, C + static_cast<long>(i) * n, i, m, k, n, accumulate);
  }
}

void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
  if (!go_parallel(m)) {
    gemm_tn_serial(A, B, C, m, k, n, accumulate);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_workers())
  for (int i = 0; i < m; ++i) {
    row_tn(A, B, C + static_cast<long>(i) * n, i, m, k, n, accumulate);
  }
#endif
}

}  // namespace tsim
